//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

use ichaos::besov::{self, Verdict, WaveletBasis};
use ichaos::chaos::{build_chaos, ChaosField, ChaosParams, Normalization};
use ichaos::covariance::{fit_onsager_constant, onsager_margin, ChargeConfig, CovarianceModel};
use ichaos::experiments::{self as ex, Campaign};
use ichaos::field::{sample_gff_square, TorusSampler};
use ichaos::geom::Rect;
use ichaos::rng;
use ichaos::tail::{self, MomentSequence};
use ichaos::whitenoise;

const SEED: u64 = 20_240_601;
const N_PTS: u64 = 400_000;

struct Outcome {
    pass: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { pass: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, msg: String) {
        self.pass &= ok;
        self.lines.push(format!("    [{}] {msg}", if ok { "ok" } else { "miss" }));
    }
}

type Run = Result<Outcome, ichaos::error::Error>;

fn second_moment_scaling() -> Run {
    let mut o = Outcome::new();
    for b2 in [0.5f64, 1.0, 1.5] {
        let t = Instant::now();
        let s = ex::second_moment_scaling(b2.sqrt(), &[0.025, 0.05, 0.1, 0.2], N_PTS, SEED)?;
        let secs = t.elapsed().as_secs_f64();
        o.check((s.slope - s.target_slope).abs() <= 0.05, format!("beta^2={b2}: slope {:.4} vs {} +- 0.05", s.slope, s.target_slope));
        o.check(secs < 300.0, format!("beta^2={b2}: quadrature {secs:.1}s < 300s"));
    }
    Ok(o)
}

fn monofractality() -> Run {
    let mut o = Outcome::new();
    for b2 in [1.0f64, 1.5] {
        let s = ex::run(&ex::ZoomScan::standard(b2.sqrt(), 12, 6, 50, 20)?, SEED)?;
        o.check((s.median - s.target).abs() <= 0.15, format!("beta^2={b2}: median exponent {:.4} vs {} +- 0.15", s.median, s.target));
        o.check(s.iqr < s.iqr_short, format!("beta^2={b2}: IQR depth 12 {:.4} < depth 6 {:.4}", s.iqr, s.iqr_short));
    }
    Ok(o)
}

fn moment_cross_validation() -> Run {
    let mut o = Outcome::new();
    let s = ex::run(&ex::FieldMoments::standard(1.0, 0.1, 4000, N_PTS, SEED)?, SEED)?;
    o.check(s.z_m2 <= 3.0, format!("m2 field {:.5e} vs quadrature {:.5e}: z = {:.2}", s.m2_field.value, s.m2_quadrature.value, s.z_m2));
    o.check(s.z_m4 <= 3.0, format!("m4 field {:.5e} vs quadrature {:.5e}: z = {:.2}", s.m4_field.value, s.m4_quadrature.value, s.z_m4));
    let r = &s.recursion;
    o.check(r.margin_sigmas >= -3.0, format!("recursion lhs {:.4e} >= rhs {:.4e}: margin {:.1} sigma", r.lhs, r.rhs, r.margin_sigmas));
    Ok(o)
}

fn rectangle_bound() -> Run {
    let mut o = Outcome::new();
    let rows = ex::rectangle_constants(1.0, 0.01, &[1.0, 4.0, 8.0], &[1, 2], N_PTS, SEED)?;
    for n in [1, 2] {
        let cs: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.constant).collect();
        let ratio = cs.iter().copied().fold(0.0, f64::max) / cs.iter().copied().fold(f64::INFINITY, f64::min);
        o.check(ratio <= 2.0, format!("N={n}: constants {cs:.3?}, max/min {ratio:.3} <= 2"));
    }
    Ok(o)
}

fn tail_algebra() -> Run {
    let mut o = Outcome::new();
    let mut worst_fit = 0.0f64;
    let mut worst_trip = 0.0f64;
    for b2 in [0.5f64, 1.0, 1.5] {
        let beta = b2.sqrt();
        for css in [-0.8, 0.1, 0.7, 2.0] {
            let seq = MomentSequence::synthetic(beta, css, 12, |_| 0.37);
            worst_fit = worst_fit.max((tail::fit_cstarstar(&seq, beta)?.c_star_star - css).abs());
            let cs = tail::cstar_from_cstarstar(css, beta)?;
            worst_trip = worst_trip.max((tail::cstarstar_from_cstar(cs, beta)? - css).abs());
        }
    }
    o.check(worst_fit <= 1e-9, format!("c** recovered from exact sequences, worst error {worst_fit:.2e}"));
    o.check(worst_trip <= 1e-12, format!("c* <-> c** round trip, worst error {worst_trip:.2e}"));

    let (beta, css) = (1.0f64, 0.4);
    let seq = MomentSequence::synthetic(beta, css, 60, |_| 0.0);
    let c = tail::cstar_from_cstarstar(css, beta)?;
    for t in [2.5, 3.0, 3.5] {
        let (env, _) = tail::markov_envelope(&seq, t)?;
        let est = -env.ln() / t.powf(4.0 / (beta * beta));
        o.check((est / c - 1.0).abs() <= 0.1, format!("envelope at t={t}: {est:.4} vs c* {c:.4}"));
    }

    let beta = 1.5f64.sqrt();
    let s = ex::run(&ex::TailSamples::standard(beta, 64, 100_000)?, SEED)?;
    o.check(
        (s.slope.slope - s.target_slope).abs() <= 0.5,
        format!("tail slope {:.3} vs {:.3} +- 0.5 over {} samples, {} window points", s.slope.slope, s.target_slope, s.samples, s.window.len()),
    );
    Ok(o)
}

fn besov_verdicts() -> Run {
    let mut o = Outcome::new();
    let s = ex::run(&ex::BesovScan::standard(1.0, 8, vec![(4.0, f64::INFINITY), (1.0, 1.0)], 20)?, SEED)?;
    for (p, q, want) in [(4.0, f64::INFINITY, Verdict::BoundedConsistent), (1.0, 1.0, Verdict::DivergentConsistent)] {
        let v = s.verdicts.iter().find(|v| v.p == p && v.q == q).expect("requested pair");
        o.check(v.verdict == want, format!("(p,q)=({p},{q}): {:?} with growth {:.3}, expected {want:?}", v.verdict, v.growth));
    }
    Ok(o)
}

fn white_noise() -> Run {
    let mut o = Outcome::new();
    let t = Instant::now();
    let a = whitenoise::estimate_a(1.0, 4_000_000, 16.0, 2.0, ex::replica_seed(SEED, "constant-a", 0))?;
    let scan = ex::WhiteNoiseScan::new(1.0, 4096, 1.0 / 3200.0, vec![0.01, 0.02, 0.04], a, 500)?;
    let s = ex::run(&scan, SEED)?;
    for (u, v) in [(1.0, 1.0), (0.5, 0.5)] {
        let row = s.ratio(0.02, u, v).expect("probe");
        o.check((0.85..=1.15).contains(&row.ratio), format!("r=0.02 E B({u},{v})^2/st = {:.3} +- {:.3}", row.ratio, row.stderr));
    }
    let ind = &s.independence.iter().find(|x| x.0 == 0.02).expect("radius").1;
    o.check(ind.z().abs() <= 3.0, format!("increment correlation {:.4} +- {:.4}", ind.correlation, ind.stderr));
    let cross = |r: f64| s.cross.iter().find(|c| c.r == r && c.s == 0.04).expect("pair").cross;
    o.check(cross(0.01).abs() < cross(0.02).abs(), format!("|E B_0.01 B_0.04| {:.3} < |E B_0.02 B_0.04| {:.3}", cross(0.01), cross(0.02)));
    o.lines.push(format!("    eps/r = {:.4} at r=0.02, {} replicas, {:.0}s", s.eps / 0.02, s.replicas, t.elapsed().as_secs_f64()));
    Ok(o)
}

fn constant_a() -> Run {
    let mut o = Outcome::new();
    let r = ex::constant_a_report(1.0, 4_000_000, 16.0, SEED)?;
    o.check(r.budget_z <= 3.0, format!("A = {:.5e} +- {:.1e}, 4x budget z = {:.2}", r.estimate.a, r.estimate.stderr, r.budget_z));
    o.check(r.far_field_spread <= 0.2, format!("far-field |w|^4 spread {:.3} <= 0.2", r.far_field_spread));
    o.check(r.violations == 0, format!("symmetrized integrand negative {} times in {} draws", r.violations, r.draws));
    Ok(o)
}

fn property_suites() -> Run {
    let mut o = Outcome::new();

    // determinism across seeds and thread counts
    let camp = ex::FieldMoments::standard(1.0, 0.1, 16, 20_000, SEED)?;
    let in_pool = |n: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("pool");
        pool.install(|| ex::run_range(&camp, SEED, 0..camp.units()))
    };
    let (a, b) = (in_pool(1)?, in_pool(4)?);
    let again = in_pool(1)?;
    let bits = |v: &Vec<[[f64; 2]; 2]>| v.iter().flatten().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
    o.check(bits(&a) == bits(&b) && bits(&a) == bits(&again), "replicas bit-identical for 1 and 4 threads and on rerun".into());
    let other = ex::run_range(&camp, SEED + 1, 0..camp.units())?;
    o.check(bits(&a) != bits(&other), "a different master seed changes the replicas".into());
    let f1 = sample_gff_square(64, 9)?;
    o.check(f1 == sample_gff_square(64, 9)?, "spectral field reproducible from its seed".into());

    // Gaussianity of a lattice node: standardized third and fourth cumulants
    let ts = TorusSampler::exact_scaling(32, 1.0 / 64.0, 1.0)?;
    let xs: Vec<f64> = (0..4000u64).map(|i| ts.sample(ex::replica_seed(SEED, "gauss", i), 0.0).values[[5, 11]]).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m = |k: i32| xs.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / n;
    let (skew, kurt) = (m(3) / m(2).powf(1.5), m(4) / (m(2) * m(2)) - 3.0);
    let (zs, zk) = (skew / (6.0 / n).sqrt(), kurt / (24.0 / n).sqrt());
    o.check(zs.abs() <= 3.0 && zk.abs() <= 3.0, format!("node skewness z = {zs:.2}, excess kurtosis z = {zk:.2}"));
    let var = ts.variance(0.0);
    let zv = (m(2) - var) / (var * (2.0 / n).sqrt());
    o.check(zv.abs() <= 3.0, format!("node variance {:.4} vs {var:.4}: z = {zv:.2}", m(2)));

    // Parseval for the orthonormal wavelet pyramid
    let chaos = build_chaos(&f1, &ChaosParams::new(1.0, 4.0 / 256.0, Normalization::Wick)?, 256)?;
    let basis = WaveletBasis::db6();
    let h = 1.0 / 256.0;
    let f = Array2::from_shape_fn((256, 256), |(i, j)| chaos.values[[i.min(chaos.dims().0 - 1), j.min(chaos.dims().1 - 1)]]);
    let pyr = besov::transform(&basis, &f, h, 7)?;
    let e0 = h * h * f.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let rel = (pyr.energy() / e0 - 1.0).abs();
    o.check(rel <= 1e-6, format!("wavelet energy relative defect {rel:.2e}"));
    let back = besov::synthesize(&basis, &pyr, h);
    let err = back.iter().zip(f.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    o.check(err <= 1e-6, format!("synthesis reconstructs the lattice to {err:.2e}"));

    // prefix sums: dyadic values make every partial sum exact
    let mut g = rng::stream(ex::replica_seed(SEED, "prefix", 0));
    let vals = Array2::from_shape_fn((64, 64), |_| Complex64::new(g.random_range(-64..64) as f64 / 8.0, g.random_range(-64..64) as f64 / 8.0));
    let c = ChaosField::from_values(vals, [0.0, 0.0], 1.0 / 64.0, 1.0, 2.0 / 64.0);
    let mut exact = true;
    for _ in 0..1000 {
        let (i0, j0) = (g.random_range(0..32usize), g.random_range(0..32usize));
        let (w, v) = (2 * g.random_range(1..16usize), 2 * g.random_range(1..16usize));
        let q = Rect::new([(i0 as f64 + w as f64 / 2.0) / 64.0, (j0 as f64 + v as f64 / 2.0) / 64.0], [w as f64 / 128.0, v as f64 / 128.0]);
        let (cx, cy) = (q.center[0], q.center[1]);
        let (hx, hy) = (q.half[0] / 2.0, q.half[1] / 2.0);
        let quads: Complex64 = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
            .iter()
            .map(|(sx, sy)| c.integrate_rect(&Rect::new([cx + sx * hx, cy + sy * hy], [hx, hy])).unwrap())
            .sum();
        let direct: Complex64 = (i0..i0 + w).flat_map(|i| (j0..j0 + v).map(move |j| (i, j))).map(|(i, j)| c.values[[i, j]]).sum::<Complex64>() / (64.0 * 64.0);
        exact &= c.integrate_rect(&q)? == quads && quads == direct;
    }
    o.check(exact, "rectangle sums equal quadrant sums and direct sums exactly on 1000 rectangles".into());

    // Onsager margins under a constant fitted on an independent sample
    let model = CovarianceModel::DirichletSquare { modes: 64 };
    let configs = |tag: &str| -> Vec<ChargeConfig> {
        let mut g = rng::stream(ex::replica_seed(SEED, tag, 0));
        (0..1000)
            .map(|_| {
                let n = g.random_range(1..=4usize);
                let mut pt = || [0.05 + 0.9 * g.random::<f64>(), 0.05 + 0.9 * g.random::<f64>()];
                let xs: Vec<_> = (0..n).map(|_| pt()).collect();
                let ys: Vec<_> = (0..n).map(|_| pt()).collect();
                ChargeConfig::new(xs, ys).unwrap()
            })
            .collect()
    };
    let sample = configs("onsager-fit");
    let fit = fit_onsager_constant(&model, &sample)?;
    let margins = |cs: &[ChargeConfig]| cs.iter().map(|c| onsager_margin(&model, c, fit)).collect::<Result<Vec<f64>, _>>();
    let worst = margins(&sample)?.into_iter().fold(f64::INFINITY, f64::min);
    o.check(worst >= -1e-12, format!("fitted C = {fit:.4}; min margin over the 1000 configurations {worst:.2e}"));
    let held = margins(&configs("onsager-check"))?;
    let negative = held.iter().filter(|&&m| m < 0.0).count();
    let low = held.iter().copied().fold(f64::INFINITY, f64::min);
    o.lines.push(format!("    held-out 1000 configurations: {negative} negative margins, min {low:.4}"));
    Ok(o)
}

fn main() {
    let criteria: [(&str, fn() -> Run); 9] = [
        ("second-moment scaling", second_moment_scaling),
        ("monofractality", monofractality),
        ("moment cross-validation", moment_cross_validation),
        ("rectangle bound", rectangle_bound),
        ("tail algebra", tail_algebra),
        ("Besov verdicts", besov_verdicts),
        ("white noise", white_noise),
        ("constant A", constant_a),
        ("property suites", property_suites),
    ];
    let only: Option<Vec<usize>> = std::env::var("ICHAOS_ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let id = k + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let (pass, lines) = match f() {
            Ok(o) => (o.pass, o.lines),
            Err(e) => (false, vec![format!("    error: {e}")]),
        };
        println!("criterion {id} ({name}): {} [{:.1}s]", if pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
        for l in lines {
            println!("{l}");
        }
        if !pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
