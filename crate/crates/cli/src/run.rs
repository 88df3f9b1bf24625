//! Campaign execution: shards, artifacts, checks and the run report.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use ichaos::besov::Verdict;
use ichaos::chaos::{build_chaos, ChaosParams, Normalization};
use ichaos::experiments::{self as ex, Campaign};
use ichaos::field::sample_gff_square;
use ichaos::io::{self, FieldSnapshot};
use ichaos::rng;
use ichaos::tail;

use crate::config::{Experiment, ExperimentConfig, FieldModel};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: String,
    pub pass: bool,
    pub module: String,
    pub operation: String,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SeedLedger {
    pub master_seed: u64,
    pub campaign_tag: u64,
    pub derivation: String,
    pub units: u64,
}

struct ConfigEcho<'a>(&'a ExperimentConfig);

impl Serialize for ConfigEcho<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let e = self.0.entries();
        let mut m = s.serialize_map(Some(e.len()))?;
        for (k, v) in e {
            m.serialize_entry(k, &v)?;
        }
        m.end()
    }
}

#[derive(Serialize)]
struct RunReport<'a, S: Serialize> {
    campaign: &'a str,
    config: ConfigEcho<'a>,
    passed: bool,
    partial: bool,
    checks: &'a [Check],
    summary: &'a S,
    seeds: SeedLedger,
    artifacts: &'a [String],
    threads: usize,
    wall_clock_s: f64,
}

pub struct Outcome {
    pub checks: Vec<Check>,
    pub report: PathBuf,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    resume: bool,
    artifacts: Vec<String>,
    checks: Vec<Check>,
    units: u64,
}

impl Ctx<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), BoxError> {
        atomic_write(&self.out.join(name), bytes)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<(), BoxError> {
        let mut s = String::from(header);
        s.push('\n');
        for r in rows {
            s.push_str(&r);
            s.push('\n');
        }
        self.write(name, s.as_bytes())
    }

    fn check(&mut self, name: &str, value: f64, target: impl Into<String>, pass: bool, module: &str, operation: &str) {
        self.checks.push(Check {
            name: name.into(),
            value,
            target: target.into(),
            pass,
            module: module.into(),
            operation: operation.into(),
            seed: self.cfg.master_seed,
        });
    }

    /// Replicas of `c`, reusing intact shards when resuming.
    fn replicas<C: Campaign>(&mut self, c: &C) -> Result<Vec<C::Replica>, BoxError> {
        self.units = c.units();
        run_sharded(c, self.cfg, self.out, self.resume)
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ShardEntry {
    pub index: u64,
    pub start: u64,
    pub end: u64,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub campaign: String,
    pub master_seed: u64,
    /// Digest of the configuration with `threads` and `output_dir` blanked.
    pub config_digest: String,
    pub shards: Vec<ShardEntry>,
}

fn config_digest(cfg: &ExperimentConfig) -> String {
    let c = ExperimentConfig { threads: 1, output_dir: PathBuf::new(), ..cfg.clone() };
    sha256_hex(c.serialize().as_bytes())
}

pub fn run_sharded<C: Campaign>(c: &C, cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<Vec<C::Replica>, BoxError> {
    let dir = out.join("shards");
    let mpath = dir.join("manifest.json");
    let digest = config_digest(cfg);
    let mut manifest = Manifest { campaign: c.name().into(), master_seed: cfg.master_seed, config_digest: digest.clone(), shards: Vec::new() };
    let previous: Option<Manifest> = if resume {
        fs::read(&mpath).ok().and_then(|b| serde_json::from_slice(&b).ok()).filter(|m: &Manifest| m.config_digest == digest && m.campaign == c.name())
    } else {
        None
    };
    if !resume && dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let units = c.units();
    let size = cfg.shard_size.max(1);
    let mut all = Vec::with_capacity(units as usize);
    for (k, start) in (0..units).step_by(size as usize).enumerate() {
        let end = (start + size).min(units);
        let file = format!("shard-{k:05}.json");
        let reused = previous.as_ref().and_then(|m| m.shards.iter().find(|e| e.index == k as u64 && e.start == start && e.end == end)).and_then(|e| {
            let bytes = fs::read(dir.join(&e.file)).ok()?;
            if sha256_hex(&bytes) != e.sha256 {
                return None;
            }
            let reps: Vec<C::Replica> = serde_json::from_slice(&bytes).ok()?;
            (reps.len() as u64 == end - start).then_some((reps, e.clone()))
        });
        let (reps, entry) = match reused {
            Some(x) => x,
            None => {
                let reps = ex::run_range(c, cfg.master_seed, start..end)?;
                let bytes = serde_json::to_vec(&reps)?;
                atomic_write(&dir.join(&file), &bytes)?;
                (reps, ShardEntry { index: k as u64, start, end, file, sha256: sha256_hex(&bytes) })
            }
        };
        all.extend(reps);
        manifest.shards.push(entry);
        atomic_write(&mpath, &serde_json::to_vec_pretty(&manifest)?)?;
    }
    Ok(all)
}

/// Execute the configured campaign under the current rayon pool.
pub fn run(cfg: &ExperimentConfig, resume: bool, threads: usize) -> Result<Outcome, BoxError> {
    let t0 = Instant::now();
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    let mut ctx = Ctx { cfg, out: &out, resume, artifacts: Vec::new(), checks: Vec::new(), units: 0 };
    let summary = match cfg.experiment {
        Experiment::Moments => moments(&mut ctx)?,
        Experiment::Scaling => scaling(&mut ctx, false)?,
        Experiment::Lil => scaling(&mut ctx, true)?,
        Experiment::FastPoints => fastpoints(&mut ctx)?,
        Experiment::Tail => tail_campaign(&mut ctx)?,
        Experiment::Besov => besov(&mut ctx)?,
        Experiment::WhiteNoise => whitenoise(&mut ctx)?,
        Experiment::ConstantA => constant_a(&mut ctx)?,
        Experiment::SampleField => sample_field(&mut ctx)?,
    };
    let name = cfg.experiment.name();
    let report = RunReport {
        campaign: name,
        config: ConfigEcho(cfg),
        passed: ctx.checks.iter().all(|c| c.pass),
        partial: false,
        checks: &ctx.checks,
        summary: &summary,
        seeds: SeedLedger {
            master_seed: cfg.master_seed,
            campaign_tag: rng::tag_of(name),
            derivation: "mix64(master_seed, tag_of(campaign), i)".into(),
            units: ctx.units,
        },
        artifacts: &ctx.artifacts,
        threads,
        wall_clock_s: t0.elapsed().as_secs_f64(),
    };
    let path = out.join("report.json");
    atomic_write(&path, &serde_json::to_vec_pretty(&report)?)?;
    Ok(Outcome { checks: ctx.checks, report: path })
}

type Summary = serde_json::Value;

fn within(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

fn moments(ctx: &mut Ctx) -> Result<Summary, BoxError> {
    let cfg = ctx.cfg;
    let scaling = ex::second_moment_scaling(cfg.beta, &cfg.radii, cfg.n_pts, cfg.master_seed)?;
    let d = (scaling.slope - scaling.target_slope).abs();
    ctx.check("m2_slope", scaling.slope, format!("{} +- 0.05", scaling.target_slope), d <= 0.05, "moment-engine", "moment2_quadrature");
    let mut rows: Vec<String> = scaling.rows.iter().map(|m| m.csv_row()).collect();
    let cross = if cfg.beta > 0.0 {
        let c = ex::FieldMoments::standard(cfg.beta, cfg.half_side, cfg.replicas, cfg.n_pts, cfg.master_seed)?;
        let reps = ctx.replicas(&c)?;
        let s = c.summarize(&reps)?;
        ctx.check("m2_field_vs_quadrature_z", s.z_m2, "<= 3", s.z_m2 <= 3.0, "moment-engine", "mc_moment");
        ctx.check("m4_field_vs_quadrature_z", s.z_m4, "<= 3", s.z_m4 <= 3.0, "moment-engine", "moment2n_importance");
        ctx.check("recursion_margin_sigmas", s.recursion.margin_sigmas, ">= -3", s.recursion.margin_sigmas >= -3.0, "moment-engine", "recursion_check");
        rows.extend([&s.m2_quadrature, &s.m4_quadrature, &s.m2_field, &s.m4_field].iter().map(|m| m.csv_row()));
        Some(s)
    } else {
        None
    };
    let rect = ex::rectangle_constants(cfg.beta, cfg.area, &cfg.aspects, &cfg.orders, cfg.n_pts, cfg.master_seed)?;
    let mut spread = Vec::new();
    for &n in &cfg.orders {
        let cs: Vec<f64> = rect.iter().filter(|r| r.n == n).map(|r| r.constant).collect();
        let ratio = cs.iter().copied().fold(0.0, f64::max) / cs.iter().copied().fold(f64::INFINITY, f64::min);
        ctx.check(&format!("rectangle_constant_ratio_n{n}"), ratio, "<= 2", ratio <= 2.0, "moment-engine", "rectangle_moment_fit");
        spread.push((n, ratio));
    }
    ctx.csv("moments.csv", ichaos::moments::MomentEstimate::csv_header(), rows)?;
    ctx.csv(
        "rectangles.csv",
        "n,a,b,moment,stderr,constant",
        rect.iter().map(|r| format!("{},{},{},{},{},{}", r.n, r.a, r.b, r.moment.value, r.moment.stderr, r.constant)),
    )?;
    Ok(serde_json::json!({ "scaling": scaling, "cross_check": cross, "rectangles": rect, "rectangle_spread": spread }))
}

fn cstar(cfg: &ExperimentConfig) -> Result<tail::TailConstants, BoxError> {
    Ok(ex::moment_route_constants(cfg.beta, cfg.moment_orders, cfg.n_pts, cfg.master_seed)?.2)
}

fn scaling(ctx: &mut Ctx, lil: bool) -> Result<Summary, BoxError> {
    let cfg = ctx.cfg;
    let c = ex::ZoomScan::standard(cfg.beta, cfg.depth, cfg.short_depth, cfg.probes, cfg.replicas)?;
    let reps = ctx.replicas(&c)?;
    let s = c.summarize(&reps)?;
    let mut ex_rows = Vec::new();
    let mut slope_rows = Vec::new();
    let mut lil_rows = Vec::new();
    for (i, r) in reps.iter().enumerate() {
        for (f, (short, l)) in r.fits.iter().zip(r.short_slopes.iter().zip(&r.lil)) {
            ex_rows.extend(f.csv_rows(cfg.beta));
            slope_rows.push(format!("{i},{},{},{},{},{}", f.center[0], f.center[1], f.slope, f.residual, short));
            for k in 0..l.radii.len() {
                lil_rows.push(format!("{i},{},{},{},{},{}", f.center[0], f.center[1], l.radii[k], l.ratios[k], l.running_max[k]));
            }
        }
    }
    ctx.csv("exponents.csv", ichaos::scaling::ExponentFit::CSV_HEADER, ex_rows)?;
    ctx.csv("slopes.csv", "replica,x,y,slope,residual,short_slope", slope_rows)?;
    if lil {
        ctx.csv("lil.csv", "replica,x,y,r,ratio,running_max", lil_rows)?;
        let t = cstar(cfg)?;
        let pred = t.c_star.powf(-cfg.beta * cfg.beta / 4.0);
        let ratio = s.lil_median_max / pred;
        ctx.check("lil_max_over_prediction", ratio, "in [1/4, 4]", within(ratio, 0.25, 4.0), "scaling-analyzer", "lil_ratio_series");
        return Ok(serde_json::json!({ "monofractal": s, "c_star": t.c_star, "prediction": pred }));
    }
    let d = (s.median - s.target).abs();
    ctx.check("median_local_exponent", s.median, format!("{} +- 0.15", s.target), d <= 0.15, "scaling-analyzer", "local_exponent");
    ctx.check("iqr_contraction", s.iqr_short - s.iqr, "> 0", s.iqr < s.iqr_short, "scaling-analyzer", "local_exponent");
    Ok(serde_json::to_value(&s)?)
}

fn fastpoints(ctx: &mut Ctx) -> Result<Summary, BoxError> {
    let cfg = ctx.cfg;
    let c = ex::FastPoints::standard(cfg.beta, cfg.thresholds.clone(), cfg.levels.clone(), cfg.replicas)?;
    let reps = ctx.replicas(&c)?;
    let s = c.summarize(&reps)?;
    let t = cstar(cfg)?;
    let b2 = cfg.beta * cfg.beta;
    let mut predicted = Vec::new();
    for &(a, slope) in &s.slopes {
        let p = 2.0 - t.c_star * a.powf(4.0 / b2);
        predicted.push((a, p));
        let ok = slope.is_finite() && (slope - p).abs() <= 0.3;
        ctx.check(&format!("fastpoint_slope_a{a}"), slope, format!("{p} +- 0.3"), ok, "scaling-analyzer", "fast_point_scan");
    }
    ctx.csv(
        "fastpoints.csv",
        ichaos::scaling::FastPointReport::CSV_HEADER,
        s.rows.iter().map(|r| format!("{},{},{},{}", r.n, r.a, r.mean_count, r.variance_diag)),
    )?;
    Ok(serde_json::json!({ "counts": s, "c_star": t.c_star, "predicted_slopes": predicted }))
}

fn tail_campaign(ctx: &mut Ctx) -> Result<Summary, BoxError> {
    let cfg = ctx.cfg;
    let c = ex::TailSamples::standard(cfg.beta, cfg.cells, cfg.replicas)?;
    let reps = ctx.replicas(&c)?;
    let s = c.summarize(&reps)?;
    let d = (s.slope.slope - s.target_slope).abs();
    ctx.check("tail_slope", s.slope.slope, format!("{} +- 0.5", s.target_slope), d <= 0.5, "tail-engine", "empirical_survival");
    let (seq, fit, consts) = ex::moment_route_constants(cfg.beta, cfg.moment_orders, cfg.n_pts, cfg.master_seed)?;
    let mut envelope_curve = Vec::new();
    let mut worst = f64::INFINITY;
    for p in &s.curve {
        let (e, _) = tail::markov_envelope(&seq, p.t)?;
        envelope_curve.push((p.t, e));
        worst = worst.min((e - p.fraction) / p.stderr.max(1e-300) + 3.0);
    }
    ctx.check("envelope_bounds_survival", worst, ">= 0 (envelope >= survival - 3 stderr)", worst >= 0.0, "tail-engine", "markov_envelope");
    let report = tail::TailReport {
        beta: cfg.beta,
        c_star_star: consts.c_star_star,
        c_star: consts.c_star,
        fit_residual: fit.residual,
        envelope_curve: envelope_curve.clone(),
        survival_curve: s.curve.iter().map(|p| (p.t, p.fraction, p.stderr)).collect(),
    };
    ctx.write("tail_report.json", &serde_json::to_vec_pretty(&report)?)?;
    ctx.csv(
        "survival.csv",
        "t,fraction,stderr,envelope",
        s.curve.iter().zip(&envelope_curve).map(|(p, e)| format!("{},{},{},{}", p.t, p.fraction, p.stderr, e.1)),
    )?;
    Ok(serde_json::json!({ "survival": s, "moment_route": report, "moment_sequence": seq }))
}

fn besov(ctx: &mut Ctx) -> Result<Summary, BoxError> {
    let cfg = ctx.cfg;
    let c = ex::BesovScan::standard(cfg.beta, cfg.besov_depth, cfg.pq.clone(), cfg.replicas)?;
    let reps = ctx.replicas(&c)?;
    let s = c.summarize(&reps)?;
    for v in &s.verdicts {
        let want = if v.q.is_infinite() { Verdict::BoundedConsistent } else { Verdict::DivergentConsistent };
        ctx.check(&format!("verdict_p{}_q{}", v.p, v.q), v.growth, format!("{want:?}"), v.verdict == want, "besov-analyzer", "regularity_verdict");
    }
    ctx.csv(
        "besov.csv",
        "p,j,median_a",
        s.median_series.iter().flat_map(|(p, a)| a.iter().enumerate().map(move |(j, x)| format!("{p},{},{x}", j + 1))),
    )?;
    Ok(serde_json::to_value(&s)?)
}

fn whitenoise(ctx: &mut Ctx) -> Result<Summary, BoxError> {
    let cfg = ctx.cfg;
    let a = ichaos::whitenoise::estimate_a(cfg.beta, cfg.a_points, cfg.w_cutoff, 2.0, ex::replica_seed(cfg.master_seed, "constant-a", 0))?;
    let c = ex::WhiteNoiseScan::new(cfg.beta, cfg.lattice, 1.0 / cfg.cells_per_unit as f64, cfg.wn_radii.clone(), a, cfg.replicas)?;
    let reps = ctx.replicas(&c)?;
    let s = c.summarize(&reps)?;
    let r = cfg.reference_radius;
    for (u, v) in [(1.0, 1.0), (0.5, 0.5)] {
        let row = s.ratio(r, u, v).ok_or("missing probe")?;
        ctx.check(&format!("variance_ratio_{u}_{v}"), row.ratio, "in [0.85, 1.15]", within(row.ratio, 0.85, 1.15), "whitenoise-tester", "variance_test");
    }
    let ind = &s.independence.iter().find(|x| x.0 == r).ok_or("missing radius")?.1;
    ctx.check("independence_z", ind.z(), "|z| <= 3", ind.z().abs() <= 3.0, "whitenoise-tester", "independence_test");
    let rs = &cfg.wn_radii;
    let top = rs[rs.len() - 1];
    let mut prev: Option<f64> = None;
    for &lo in &rs[..rs.len() - 1] {
        let x = s.cross.iter().find(|c| c.r == lo && c.s == top).ok_or("missing cross")?;
        if let Some(p) = prev {
            ctx.check(
                &format!("cross_{p}_below_{lo}"),
                x.cross,
                "cross moment grows with r at fixed s",
                s.cross.iter().find(|c| c.r == p && c.s == top).unwrap().cross.abs() < x.cross.abs(),
                "whitenoise-tester",
                "cross_scale_test",
            );
        }
        prev = Some(lo);
    }
    let mut rows = Vec::new();
    for (r, vs) in &s.variance {
        rows.extend(vs.iter().map(|v| format!("{r},{}", v.csv_row())));
    }
    ctx.csv("variance.csv", &format!("r,{}", ichaos::whitenoise::VarianceRow::CSV_HEADER), rows)?;
    ctx.csv(
        "cross.csv",
        "r,s,cross,cross_stderr,var_r,var_s,gap",
        s.cross.iter().map(|c| format!("{},{},{},{},{},{},{}", c.r, c.s, c.cross, c.cross_stderr, c.var_r, c.var_s, c.gap)),
    )?;
    ctx.csv(
        "independence.csv",
        "r,correlation,stderr,distance_correlation,degenerate",
        s.independence.iter().map(|(r, i)| format!("{r},{},{},{},{}", i.correlation, i.stderr, i.distance_correlation, i.degenerate)),
    )?;
    Ok(serde_json::to_value(&s)?)
}

fn constant_a(ctx: &mut Ctx) -> Result<Summary, BoxError> {
    let cfg = ctx.cfg;
    let r = ex::constant_a_report(cfg.beta, cfg.a_points, cfg.w_cutoff, cfg.master_seed)?;
    ctx.check("budget_z", r.budget_z, "<= 3", r.budget_z <= 3.0, "whitenoise-tester", "estimate_A");
    ctx.check("split_z", r.split_z, "< 2", r.split_z < 2.0, "whitenoise-tester", "estimate_A");
    ctx.check("far_field_spread", r.far_field_spread, "<= 0.2", r.far_field_spread <= 0.2, "whitenoise-tester", "estimate_A");
    ctx.check("symmetrized_violations", r.violations as f64, "0", r.violations == 0, "whitenoise-tester", "estimate_A");
    let e = &r.estimate;
    let json = serde_json::json!({ "A": e.a, "stderr": e.stderr, "split_radius": e.split_radius, "tail_fit": e.tail_fit });
    ctx.write("constant_a.json", &serde_json::to_vec_pretty(&json)?)?;
    ctx.csv("far_field.csv", "w,scaled,stderr", r.far_field.iter().map(|p| format!("{},{},{}", p.w, p.scaled, p.stderr)))?;
    Ok(serde_json::to_value(&r)?)
}

fn sample_field(ctx: &mut Ctx) -> Result<Summary, BoxError> {
    let cfg = ctx.cfg;
    let seed = ex::replica_seed(cfg.master_seed, "sample-field", 0);
    let g = cfg.grid;
    let (field, chaos) = match cfg.model {
        FieldModel::Lattice => {
            let h = 1.0 / g as f64;
            let eps = if cfg.eps > 0.0 { cfg.eps } else { 2.0 * h };
            let m = ex::LatticeModel::exact_scaling(g, h, 0.5, [0.0; 2], cfg.beta, eps, true)?;
            let raw = m.sampler.sample(seed, 0.0);
            let chaos = build_chaos(&m.sampler.realization(seed), &m.params, g)?;
            (FieldSnapshot::Lattice(raw), chaos)
        }
        FieldModel::Spectral => {
            let f = sample_gff_square(cfg.modes, seed)?;
            let eps = if cfg.eps > 0.0 { cfg.eps } else { 4.0 / g as f64 };
            let chaos = build_chaos(&f, &ChaosParams::new(cfg.beta, eps, Normalization::Wick)?, g)?;
            (FieldSnapshot::Spectral(f), chaos)
        }
    };
    let mut buf = Vec::new();
    io::write_field(&mut buf, &field)?;
    ctx.write("field.iclf", &buf)?;
    let field_sha = sha256_hex(&buf);
    buf.clear();
    io::write_chaos(&mut buf, &chaos)?;
    ctx.write("chaos.iccf", &buf)?;
    let (n1, n2) = chaos.dims();
    Ok(serde_json::json!({
        "model": cfg.model.to_string(),
        "seed": seed,
        "eps": chaos.eps,
        "dims": [n1, n2],
        "spacing": chaos.spacing,
        "field_sha256": field_sha,
        "chaos_sha256": sha256_hex(&buf),
    }))
}
