//! End-to-end campaigns. A campaign draws independent replicas, replica `i`
//! from the seed `mix64(master, tag_of(name), i)`, and reduces them in index
//! order, so results do not depend on the thread count or on sharding.

use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::besov::{self, Verdict, VerdictReport, WaveletBasis};
use crate::chaos::{chaos_from_regularized, ChaosField, ChaosParams, Normalization};
use crate::covariance::{CovarianceModel, SeedKernel};
use crate::error::{invalid, Error, Result};
use crate::field::{RegularizedField, TorusSampler};
use crate::geom::{Point, Rect};
use crate::moments::{self, LatticeKernel, ModelKernel, MomentEstimate, RecursionCheck};
use crate::rng;
use crate::scaling::{self, ExponentFit, LilSeries, RadiiLadder};
use crate::tail::{self, MomentEntry, MomentSequence, SurvivalPoint, TailConstants, TailSlope};
use crate::whitenoise::{self, AEstimate, CrossScaleReport, FarFieldPoint, IndependenceReport, SheetSample, VarianceRow};
use crate::zoom::{ZoomConfig, ZoomSampler};

pub trait Campaign: Sync {
    type Replica: Serialize + DeserializeOwned + Send;
    type Summary: Serialize;

    fn name(&self) -> &'static str;
    /// Number of replica units.
    fn units(&self) -> u64;
    fn replica(&self, seed: u64) -> Result<Self::Replica>;
    fn summarize(&self, reps: &[Self::Replica]) -> Result<Self::Summary>;
}

pub fn replica_seed(master: u64, campaign: &str, i: u64) -> u64 {
    rng::mix64(master, rng::tag_of(campaign), i)
}

/// Replicas `range` in index order.
pub fn run_range<C: Campaign>(c: &C, master: u64, range: Range<u64>) -> Result<Vec<C::Replica>> {
    range.into_par_iter().map(|i| c.replica(replica_seed(master, c.name(), i))).collect()
}

pub fn run<C: Campaign>(c: &C, master: u64) -> Result<C::Summary> {
    let reps = run_range(c, master, 0..c.units())?;
    c.summarize(&reps)
}

// ---------------------------------------------------------------------------
// Lattice chaos

/// Exact-scaling lattice field with conformal normalization.
pub struct LatticeModel {
    pub sampler: TorusSampler,
    /// Lower-left corner of the window.
    pub origin: Point,
    pub params: ChaosParams,
}

impl LatticeModel {
    /// `n x n` nodes of spacing `h` and range `range`; `periodic` uses the whole
    /// torus of side `n h`.
    pub fn exact_scaling(n: usize, h: f64, range: f64, origin: Point, beta: f64, eps: f64, periodic: bool) -> Result<Self> {
        let sampler = if periodic {
            TorusSampler::exact_scaling_periodic(n, h, range)?
        } else {
            TorusSampler::exact_scaling(n, h, range)?
        };
        if eps < 2.0 * h * (1.0 - 1e-12) {
            return Err(Error::Resolution(format!("eps = {eps} is below twice the spacing {h}")));
        }
        Ok(LatticeModel { sampler, origin, params: ChaosParams::new(beta, eps, Normalization::Conformal)? })
    }

    pub fn chaos_pair(&self, seed: u64) -> Result<[ChaosField; 2]> {
        let (a, b) = self.sampler.regularized_pair(seed, self.params.eps);
        let mk = |mut r: RegularizedField| {
            r.field.origin = self.origin;
            chaos_from_regularized(&r, &self.params)
        };
        Ok([mk(a)?, mk(b)?])
    }

    /// Exact two-point kernel of the chaos.
    pub fn kernel(&self) -> LatticeKernel {
        LatticeKernel { table: self.sampler.lag_table(self.params.eps), origin: self.origin, log_cr: self.sampler.log_cr }
    }

    pub fn spacing(&self) -> f64 {
        self.sampler.spacing
    }
}

fn c2(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

// ---------------------------------------------------------------------------
// Second moments

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct M2Scaling {
    pub beta: f64,
    pub range: f64,
    pub target_slope: f64,
    pub slope: f64,
    pub rows: Vec<MomentEstimate>,
}

/// `m_2(r) = E|mu(Q(0, r))|^2` of the continuum exact-scaling field with range 1
/// and the slope of `log m_2` against `log r`.
pub fn second_moment_scaling(beta: f64, radii: &[f64], n_pts: u64, master: u64) -> Result<M2Scaling> {
    if radii.len() < 2 {
        return Err(Error::InsufficientData("need two radii".into()));
    }
    if radii.iter().any(|&r| !(r > 0.0 && r < 0.35)) {
        return invalid("radii must lie in (0, 0.35) so that Q(0, r) has diameter below the range");
    }
    let model = CovarianceModel::ExactScaling { r: 1.0 };
    let k = ModelKernel(&model);
    let rows = radii
        .iter()
        .enumerate()
        .map(|(i, &r)| moments::moment2_quadrature(&Rect::square([0.0; 2], r), beta, &k, n_pts, replica_seed(master, "moments", i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = radii.iter().zip(&rows).map(|(r, m)| (r.ln(), m.value.ln())).collect();
    let slope = tail::least_squares(&pts).0;
    Ok(M2Scaling { beta, range: 1.0, target_slope: 4.0 - beta * beta, slope, rows })
}

/// Field Monte Carlo against quadrature of the same lattice kernel.
pub struct FieldMoments {
    pub model: LatticeModel,
    pub square: Rect,
    pub pairs: u64,
    pub n_pts: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentCheck {
    pub beta: f64,
    pub geometry: String,
    pub m2_exact: f64,
    pub m2_quadrature: MomentEstimate,
    pub m4_quadrature: MomentEstimate,
    pub m2_field: MomentEstimate,
    pub m4_field: MomentEstimate,
    pub z_m2: f64,
    pub z_m4: f64,
    /// Whole square against its two halves, `N = 2` against `1 + 1`.
    pub recursion: RecursionCheck,
}

impl FieldMoments {
    /// `Q(0, half)` on a lattice of spacing `half / 32` and range 1.
    pub fn standard(beta: f64, half: f64, replicas: u64, n_pts: u64, seed: u64) -> Result<Self> {
        let h = half / 32.0;
        let model = LatticeModel::exact_scaling(128, h, 1.0, [-64.0 * h, -64.0 * h], beta, 2.0 * h, false)?;
        Ok(FieldMoments { model, square: Rect::square([0.0; 2], half), pairs: replicas.div_ceil(2), n_pts, seed })
    }
}

impl Campaign for FieldMoments {
    type Replica = [[f64; 2]; 2];
    type Summary = MomentCheck;

    fn name(&self) -> &'static str {
        "moments"
    }

    fn units(&self) -> u64 {
        self.pairs
    }

    fn replica(&self, seed: u64) -> Result<Self::Replica> {
        let [a, b] = self.model.chaos_pair(seed)?;
        Ok([c2(a.integrate_rect(&self.square)?), c2(b.integrate_rect(&self.square)?)])
    }

    fn summarize(&self, reps: &[Self::Replica]) -> Result<MomentCheck> {
        let masses: Vec<Complex64> = reps.iter().flatten().map(|z| Complex64::new(z[0], z[1])).collect();
        let beta = self.model.params.beta;
        let q = &self.square;
        let geom = moments::geometry_label(q);
        let k = self.model.kernel();
        let s = |i| rng::mix64(self.seed, rng::tag_of("moments-quadrature"), i);
        let m2_exact = k.m2_exact(beta, q)?;
        let m2_quadrature = moments::moment2_quadrature(q, beta, &k, self.n_pts, s(0))?;
        let m4_quadrature = moments::moment2n_importance(q, beta, 2, &k, self.n_pts, s(1))?;
        let m2_field = moments::mc_moment(&masses, 1, beta, &geom, self.seed)?;
        let m4_field = moments::mc_moment(&masses, 2, beta, &geom, self.seed)?;
        let (c, hf) = (q.center, q.half);
        let left = Rect::new([c[0] - hf[0] / 2.0, c[1]], [hf[0] / 2.0, hf[1]]);
        let right = Rect::new([c[0] + hf[0] / 2.0, c[1]], [hf[0] / 2.0, hf[1]]);
        let ml = moments::moment2_quadrature(&left, beta, &k, self.n_pts, s(2))?;
        let mr = moments::moment2_quadrature(&right, beta, &k, self.n_pts, s(3))?;
        Ok(MomentCheck {
            beta,
            geometry: geom,
            m2_exact,
            z_m2: m2_field.z_score(&m2_quadrature),
            z_m4: m4_field.z_score(&m4_quadrature),
            recursion: moments::recursion_check(&m4_quadrature, &[(&ml, 1), (&mr, 1)]),
            m2_quadrature,
            m4_quadrature,
            m2_field,
            m4_field,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RectangleRow {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub moment: MomentEstimate,
    pub constant: f64,
}

/// Rectangle constants for the given aspect ratios at fixed area, exact-scaling
/// kernel with range 1.
pub fn rectangle_constants(beta: f64, area: f64, aspects: &[f64], orders: &[usize], n_pts: u64, master: u64) -> Result<Vec<RectangleRow>> {
    let model = CovarianceModel::ExactScaling { r: 1.0 };
    let k = ModelKernel(&model);
    let mut rows = Vec::new();
    for (i, &n) in orders.iter().enumerate() {
        for (j, &asp) in aspects.iter().enumerate() {
            let (a, b) = ((area * asp).sqrt(), (area / asp).sqrt());
            if a.hypot(b) >= 1.0 {
                return invalid(format!("{a} x {b} rectangle exceeds the range"));
            }
            let seed = replica_seed(master, "rectangle", (i * aspects.len() + j) as u64);
            let (moment, constant) = moments::rectangle_moment_fit(a, b, beta, n, &k, n_pts, seed)?;
            rows.push(RectangleRow { n, a, b, moment, constant });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Local exponents and the iterated-logarithm ratio

/// Probes around many centres of the multilevel sampler.
pub struct ZoomScan {
    pub sampler: ZoomSampler,
    pub ladder: RadiiLadder,
    pub short_depth: usize,
    pub probes: usize,
    pub replicas: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZoomReplica {
    pub fits: Vec<ExponentFit>,
    pub short_slopes: Vec<f64>,
    pub lil: Vec<LilSeries>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonofractalSummary {
    pub beta: f64,
    pub depth: usize,
    pub short_depth: usize,
    pub probes: usize,
    pub replicas: usize,
    pub target: f64,
    /// Median slope over all probes and replicas at full depth.
    pub median: f64,
    /// Replica-median IQR at full and short depth.
    pub iqr: f64,
    pub iqr_short: f64,
    /// Replicas whose IQR shrinks when the ladder deepens.
    pub contracted: usize,
    /// Replica-median of the final running maximum of the iterated-logarithm ratio.
    pub lil_median_max: f64,
}

impl ZoomScan {
    /// Dyadic ladder from `1/16` with `depth` radii, 64 cells per level,
    /// centres in `Q(1/2, 1/4)`, range 1.
    pub fn standard(beta: f64, depth: usize, short_depth: usize, probes: usize, replicas: u64) -> Result<Self> {
        let r0 = 1.0 / 16.0;
        if short_depth < 4 || short_depth > depth {
            return invalid("short depth must lie in [4, depth]");
        }
        let cfg = ZoomConfig {
            beta,
            range: 1.0,
            r0,
            levels: depth,
            cells: 64,
            cutoff_ratio: 0.125,
            probe_region: Rect::square([0.5, 0.5], 0.25),
        };
        let sampler = ZoomSampler::new(cfg, Arc::new(SeedKernel::wendland(512)))?;
        Ok(ZoomScan { sampler, ladder: RadiiLadder::dyadic(r0, 0.5, depth)?, short_depth, probes, replicas })
    }
}

impl Campaign for ZoomScan {
    type Replica = ZoomReplica;
    type Summary = MonofractalSummary;

    fn name(&self) -> &'static str {
        "scaling"
    }

    fn units(&self) -> u64 {
        self.replicas
    }

    fn replica(&self, seed: u64) -> Result<ZoomReplica> {
        let base = self.sampler.base_field(seed);
        let region = self.sampler.cfg.probe_region;
        let mut r = rng::stream(rng::mix64(seed, rng::tag_of("probes"), 0));
        let short = self.ladder.truncate(self.short_depth)?;
        let mut out = ZoomReplica { fits: Vec::new(), short_slopes: Vec::new(), lil: Vec::new() };
        for p in 0..self.probes {
            let u = [r.random::<f64>(), r.random::<f64>()];
            let z = self.sampler.zoom(&base, region.at_unit(u), seed, p as u64)?;
            out.fits.push(scaling::local_exponent(&z, z.center, &self.ladder)?);
            out.short_slopes.push(scaling::local_exponent(&z, z.center, &short)?.slope);
            out.lil.push(scaling::lil_ratio_series(&z, z.center, &self.ladder)?);
        }
        Ok(out)
    }

    fn summarize(&self, reps: &[ZoomReplica]) -> Result<MonofractalSummary> {
        if reps.is_empty() || self.probes < 4 {
            return Err(Error::InsufficientData("need replicas with at least four probes".into()));
        }
        let beta = self.sampler.cfg.beta;
        let all: Vec<f64> = reps.iter().flat_map(|r| r.fits.iter().map(|f| f.slope)).collect();
        let iq: Vec<(f64, f64)> = reps
            .iter()
            .map(|r| {
                let full: Vec<f64> = r.fits.iter().map(|f| f.slope).collect();
                (scaling::median_iqr(&full).1, scaling::median_iqr(&r.short_slopes).1)
            })
            .collect();
        let maxes: Vec<f64> = reps.iter().flat_map(|r| r.lil.iter().map(|s| *s.running_max.last().unwrap())).collect();
        Ok(MonofractalSummary {
            beta,
            depth: self.ladder.depth(),
            short_depth: self.short_depth,
            probes: self.probes,
            replicas: reps.len(),
            target: 2.0 - beta * beta / 2.0,
            median: scaling::median_iqr(&all).0,
            iqr: scaling::median_iqr(&iq.iter().map(|p| p.0).collect::<Vec<_>>()).0,
            iqr_short: scaling::median_iqr(&iq.iter().map(|p| p.1).collect::<Vec<_>>()).0,
            contracted: iq.iter().filter(|p| p.0 < p.1).count(),
            lil_median_max: scaling::median_iqr(&maxes).0,
        })
    }
}

// ---------------------------------------------------------------------------
// Fast points

pub struct FastPoints {
    pub model: LatticeModel,
    pub thresholds: Vec<f64>,
    pub levels: Vec<u32>,
    pub delta: f64,
    pub pairs: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FastPointRow {
    pub a: f64,
    pub n: u32,
    pub mean_count: f64,
    pub grid_size: u64,
    pub variance_diag: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FastPointSummary {
    pub beta: f64,
    pub delta: f64,
    pub replicas: usize,
    pub rows: Vec<FastPointRow>,
    /// `(a, slope of log2 mean count against n)`; NaN when a level has no counts.
    pub slopes: Vec<(f64, f64)>,
}

impl FastPoints {
    /// Periodic `2048^2` unit torus with range 1/2.
    pub fn standard(beta: f64, thresholds: Vec<f64>, levels: Vec<u32>, replicas: u64) -> Result<Self> {
        let h = 1.0 / 2048.0;
        let model = LatticeModel::exact_scaling(2048, h, 0.5, [0.0; 2], beta, 2.0 * h, true)?;
        Ok(FastPoints { model, thresholds, levels, delta: 0.1, pairs: replicas.div_ceil(2) })
    }
}

impl Campaign for FastPoints {
    type Replica = Vec<scaling::FastPointReport>;
    type Summary = FastPointSummary;

    fn name(&self) -> &'static str {
        "fastpoints"
    }

    fn units(&self) -> u64 {
        self.pairs
    }

    fn replica(&self, seed: u64) -> Result<Self::Replica> {
        let mut out = Vec::new();
        for c in self.model.chaos_pair(seed)? {
            for &a in &self.thresholds {
                for &n in &self.levels {
                    out.push(scaling::fast_point_scan(&c, a, n, self.delta)?);
                }
            }
        }
        Ok(out)
    }

    fn summarize(&self, reps: &[Self::Replica]) -> Result<FastPointSummary> {
        if reps.is_empty() {
            return Err(Error::InsufficientData("no replicas".into()));
        }
        let per = self.thresholds.len() * self.levels.len();
        let samples = (reps.len() * 2) as f64;
        let mut rows = Vec::with_capacity(per);
        for k in 0..per {
            let pick = reps.iter().flat_map(|r| [&r[k], &r[k + per]]);
            let (mut count, mut diag) = (0.0, 0.0);
            for p in pick {
                count += p.count as f64;
                diag += if p.variance_diag.is_finite() { p.variance_diag } else { 0.0 };
            }
            let first = &reps[0][k];
            rows.push(FastPointRow { a: first.a, n: first.n, mean_count: count / samples, grid_size: first.grid_size, variance_diag: diag / samples });
        }
        let slopes = self
            .thresholds
            .iter()
            .map(|&a| {
                let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.a == a).map(|r| (r.n as f64, r.mean_count.log2())).collect();
                let s = if pts.iter().all(|p| p.1.is_finite()) && pts.len() >= 2 { tail::least_squares(&pts).0 } else { f64::NAN };
                (a, s)
            })
            .collect();
        Ok(FastPointSummary { beta: self.model.params.beta, delta: self.delta, replicas: reps.len() * 2, rows, slopes })
    }
}

// ---------------------------------------------------------------------------
// Tails

/// `|mu(Q(0, 1))|` of the lattice field with range 4.
pub struct TailSamples {
    pub model: LatticeModel,
    pub pairs: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailSummary {
    pub beta: f64,
    pub samples: usize,
    pub target_slope: f64,
    /// Field moments `m_2, m_4, m_6` of `|mu(Q(0,1))|`.
    pub moments: Vec<MomentEstimate>,
    pub curve: Vec<SurvivalPoint>,
    pub window: Vec<SurvivalPoint>,
    pub slope: TailSlope,
}

/// Survival points with at least this many exceedances and at most this fraction are fitted.
pub const TAIL_MIN_COUNT: f64 = 100.0;
pub const TAIL_MAX_FRACTION: f64 = 0.1;

impl TailSamples {
    /// `[-1, 1]^2` on a `cells x cells` lattice.
    pub fn standard(beta: f64, cells: usize, replicas: u64) -> Result<Self> {
        let h = 2.0 / cells as f64;
        let model = LatticeModel::exact_scaling(cells, h, 4.0, [-1.0, -1.0], beta, 2.0 * h, false)?;
        Ok(TailSamples { model, pairs: replicas.div_ceil(2) })
    }

    pub fn masses(reps: &[[[f64; 2]; 2]]) -> Vec<Complex64> {
        reps.iter().flatten().map(|z| Complex64::new(z[0], z[1])).collect()
    }
}

impl Campaign for TailSamples {
    type Replica = [[f64; 2]; 2];
    type Summary = TailSummary;

    fn name(&self) -> &'static str {
        "tail"
    }

    fn units(&self) -> u64 {
        self.pairs
    }

    fn replica(&self, seed: u64) -> Result<Self::Replica> {
        let [a, b] = self.model.chaos_pair(seed)?;
        let q = Rect::square([0.0; 2], 1.0);
        Ok([c2(a.integrate_rect(&q)?), c2(b.integrate_rect(&q)?)])
    }

    fn summarize(&self, reps: &[Self::Replica]) -> Result<TailSummary> {
        let masses = Self::masses(reps);
        let xs: Vec<f64> = masses.iter().map(|z| z.norm()).collect();
        let beta = self.model.params.beta;
        let grid = tail::quantile_grid(&xs, 0.3, 0.9999, 40);
        let curve = tail::empirical_survival(&xs, &grid)?;
        let window = tail::resolvable_window(&curve, xs.len(), TAIL_MIN_COUNT, TAIL_MAX_FRACTION);
        let slope = tail::tail_slope(&window)?;
        let moments = (1..=3).map(|n| moments::mc_moment(&masses, n, beta, "sq(0,0;1)", 0)).collect::<Result<Vec<_>>>()?;
        Ok(TailSummary { beta, samples: xs.len(), target_slope: 4.0 / (beta * beta), moments, curve, window, slope })
    }
}

/// `m_{2N}` of `Q(0, 1)` for `N = 1 ..= n_max` under the continuum exact-scaling
/// kernel with range 4, the fitted `c**` and the constants it implies.
pub fn moment_route_constants(beta: f64, n_max: usize, n_pts: u64, master: u64) -> Result<(MomentSequence, tail::CStarStarFit, TailConstants)> {
    let model = CovarianceModel::ExactScaling { r: 4.0 };
    let k = ModelKernel(&model);
    let q = Rect::square([0.0; 2], 1.0);
    let entries = (1..=n_max)
        .map(|n| {
            let m = moments::moment2n_importance(&q, beta, n, &k, n_pts, replica_seed(master, "tail-moments", n as u64))?;
            Ok(MomentEntry { n, m_2n: m.value, stderr: m.stderr })
        })
        .collect::<Result<Vec<_>>>()?;
    sequence_constants(entries, beta)
}

/// `c**` and the implied constants from moment estimates `m_{2N}`, `N = 1, 2, ...`.
pub fn sequence_constants(entries: Vec<MomentEntry>, beta: f64) -> Result<(MomentSequence, tail::CStarStarFit, TailConstants)> {
    let seq = MomentSequence::new(entries)?;
    let fit = tail::fit_cstarstar(&seq, beta)?;
    let consts = TailConstants::from_c_star_star(beta, fit.c_star_star)?;
    Ok((seq, fit, consts))
}

// ---------------------------------------------------------------------------
// Besov statistics

pub struct BesovScan {
    pub model: LatticeModel,
    pub basis: WaveletBasis,
    pub depth: usize,
    pub ps: Vec<f64>,
    pub pqs: Vec<(f64, f64)>,
    pub pairs: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BesovSummary {
    pub beta: f64,
    pub depth: usize,
    pub eps: f64,
    pub replicas: usize,
    pub verdicts: Vec<VerdictReport>,
    /// `(p, Spearman correlation of the scaled variance with j)`.
    pub variance_trend: Vec<(f64, f64)>,
    /// `(p, replica-median A_j for j = 1..=depth)`.
    pub median_series: Vec<(f64, Vec<f64>)>,
}

impl BesovScan {
    /// Periodic unit torus with `eps = 2^{-depth}/8` and spacing `eps/2`, range 1/2.
    pub fn standard(beta: f64, depth: usize, pqs: Vec<(f64, f64)>, replicas: u64) -> Result<Self> {
        let n = 1usize << (depth + 4);
        let h = 1.0 / n as f64;
        let model = LatticeModel::exact_scaling(n, h, 0.5, [0.0; 2], beta, 2.0 * h, true)?;
        let mut ps: Vec<f64> = pqs.iter().map(|pq| pq.0).collect();
        ps.sort_by(|a, b| a.total_cmp(b));
        ps.dedup();
        Ok(BesovScan { model, basis: WaveletBasis::db6(), depth, ps, pqs, pairs: replicas.div_ceil(2) })
    }
}

impl Campaign for BesovScan {
    /// `[chaos][p][j - 1]`
    type Replica = Vec<Vec<Vec<f64>>>;
    type Summary = BesovSummary;

    fn name(&self) -> &'static str {
        "besov"
    }

    fn units(&self) -> u64 {
        self.pairs
    }

    fn replica(&self, seed: u64) -> Result<Self::Replica> {
        let beta = self.model.params.beta;
        let mut out = Vec::with_capacity(2);
        for c in self.model.chaos_pair(seed)? {
            let pyr = besov::analyze(&c, besov::central_window, &self.basis, self.depth)?;
            out.push(self.ps.iter().map(|&p| besov::besov_statistic(&pyr, p, beta)).collect::<Result<Vec<_>>>()?);
        }
        Ok(out)
    }

    fn summarize(&self, reps: &[Self::Replica]) -> Result<BesovSummary> {
        let beta = self.model.params.beta;
        let series = |k: usize| -> Vec<Vec<f64>> { reps.iter().flatten().map(|c| c[k].clone()).collect() };
        let mut verdicts = Vec::new();
        for &(p, q) in &self.pqs {
            let k = self.ps.iter().position(|&x| x == p).expect("p listed");
            verdicts.push(besov::regularity_verdict(&series(k), p, q)?);
        }
        let mut variance_trend = Vec::new();
        let mut median_series = Vec::new();
        for (k, &p) in self.ps.iter().enumerate() {
            let s = series(k);
            if p.is_finite() {
                let v = besov::variance_decay(&s, p, beta);
                let js: Vec<f64> = (1..=v.len()).map(|j| j as f64).collect();
                variance_trend.push((p, besov::spearman(&js, &v)));
            }
            let med = (0..self.depth).map(|j| scaling::median_iqr(&s.iter().map(|a| a[j]).collect::<Vec<_>>()).0).collect();
            median_series.push((p, med));
        }
        Ok(BesovSummary { beta, depth: self.depth, eps: self.model.params.eps, replicas: reps.len() * 2, verdicts, variance_trend, median_series })
    }
}

impl BesovSummary {
    pub fn verdict(&self, p: f64, q: f64) -> Option<Verdict> {
        self.verdicts.iter().find(|v| v.p == p && v.q == q).map(|v| v.verdict)
    }
}

// ---------------------------------------------------------------------------
// White noise

pub struct WhiteNoiseScan {
    pub model: LatticeModel,
    pub radii: Vec<f64>,
    pub m2: Vec<MomentEstimate>,
    pub a: AEstimate,
    /// Sheet grid lines kept per unit length.
    pub grid: usize,
    pub pairs: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WhiteNoiseSummary {
    pub beta: f64,
    pub eps: f64,
    pub spacing: f64,
    pub replicas: usize,
    pub a: AEstimate,
    /// `(r, rows)`
    pub variance: Vec<(f64, Vec<VarianceRow>)>,
    /// `(r, report)` for the increment over `[1/2, 1]^2` against `B(1/2, 1/2)`.
    pub independence: Vec<(f64, IndependenceReport)>,
    pub cross: Vec<CrossScaleReport>,
}

pub const WHITE_NOISE_PROBES: [(f64, f64); 3] = [(1.0, 1.0), (0.5, 0.5), (0.5, 1.0)];

impl WhiteNoiseScan {
    /// Periodic torus of `n` nodes and spacing `h` (with `1/h` an integer) and
    /// range 1/2 covering `[0,1]^2` grown by `2 max(r)`; `eps = 2h`.
    pub fn new(beta: f64, n: usize, h: f64, radii: Vec<f64>, a: AEstimate, replicas: u64) -> Result<Self> {
        let rmax = radii.iter().copied().fold(0.0, f64::max);
        let margin = (2.0 * rmax / h).ceil();
        let origin = [-margin * h, -margin * h];
        if (2.0 * margin + 1.0 / h) > n as f64 + 1e-9 {
            return Err(Error::OutOfFootprint(format!("{n} nodes do not cover [0,1]^2 grown by {}", 2.0 * rmax)));
        }
        let model = LatticeModel::exact_scaling(n, h, 0.5, origin, beta, 2.0 * h, true)?;
        let k = model.kernel();
        let m2 = radii
            .iter()
            .map(|&r| {
                Ok(MomentEstimate {
                    method: "lattice_exact".into(),
                    beta,
                    order_2n: 2,
                    geometry: moments::geometry_label(&Rect::square([0.5, 0.5], r)),
                    value: k.m2_exact(beta, &Rect::square([0.5, 0.5], r))?,
                    stderr: 0.0,
                    n_evals: 0,
                    seed: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WhiteNoiseScan { model, radii, m2, a, grid: 4, pairs: replicas.div_ceil(2) })
    }

    fn sheet(&self, k: usize, values: &[f64]) -> SheetSample {
        let g = self.grid + 1;
        SheetSample {
            values: ndarray::Array2::from_shape_vec((g, g), values.to_vec()).expect("sheet shape"),
            spacing: 1.0 / self.grid as f64,
            r: self.radii[k],
            a: self.a.a,
        }
    }
}

impl Campaign for WhiteNoiseScan {
    /// `[chaos][radius]` flattened coarse sheets.
    type Replica = Vec<Vec<Vec<f64>>>;
    type Summary = WhiteNoiseSummary;

    fn name(&self) -> &'static str {
        "whitenoise"
    }

    fn units(&self) -> u64 {
        self.pairs
    }

    fn replica(&self, seed: u64) -> Result<Self::Replica> {
        let per_unit = (1.0 / self.model.spacing()).round() as usize;
        if per_unit % self.grid != 0 {
            return invalid("sheet grid must divide the lattice");
        }
        let mut out = Vec::with_capacity(2);
        for c in self.model.chaos_pair(seed)? {
            let mut by_r = Vec::with_capacity(self.radii.len());
            for (k, &r) in self.radii.iter().enumerate() {
                let w = whitenoise::build_wfield(&c, r, &self.m2[k])?;
                let s = whitenoise::build_sheet(&w, self.a.a)?.coarsen(per_unit / self.grid)?;
                by_r.push(s.values.iter().copied().collect());
            }
            out.push(by_r);
        }
        Ok(out)
    }

    fn summarize(&self, reps: &[Self::Replica]) -> Result<WhiteNoiseSummary> {
        let sheets: Vec<Vec<SheetSample>> = (0..self.radii.len())
            .map(|k| reps.iter().flatten().map(|c| self.sheet(k, &c[k])).collect())
            .collect();
        let mut variance = Vec::new();
        let mut independence = Vec::new();
        for (k, s) in sheets.iter().enumerate() {
            variance.push((self.radii[k], whitenoise::variance_test(s, &WHITE_NOISE_PROBES)?));
            independence.push((self.radii[k], whitenoise::independence_test(s, (0.5, 0.5), (1.0, 1.0))?));
        }
        let mut cross = Vec::new();
        for i in 0..self.radii.len() {
            for j in i + 1..self.radii.len() {
                let pairs: Vec<_> = sheets[i].iter().cloned().zip(sheets[j].iter().cloned()).collect();
                cross.push(whitenoise::cross_scale_test(&pairs)?);
            }
        }
        Ok(WhiteNoiseSummary {
            beta: self.model.params.beta,
            eps: self.model.params.eps,
            spacing: self.model.spacing(),
            replicas: reps.len() * 2,
            a: self.a.clone(),
            variance,
            independence,
            cross,
        })
    }
}

impl WhiteNoiseSummary {
    pub fn ratio(&self, r: f64, s: f64, t: f64) -> Option<&VarianceRow> {
        self.variance.iter().find(|v| v.0 == r)?.1.iter().find(|row| row.s == s && row.t == t)
    }
}

// ---------------------------------------------------------------------------
// The constant A

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstantAReport {
    pub beta: f64,
    pub estimate: AEstimate,
    pub quadrupled: AEstimate,
    /// `|A - A'| / combined stderr` between the two budgets.
    pub budget_z: f64,
    pub split_three: AEstimate,
    pub split_z: f64,
    pub far_field: Vec<FarFieldPoint>,
    /// Largest relative deviation of `f(w)|w|^4` from its profile mean.
    pub far_field_spread: f64,
    pub violations: u64,
    pub draws: u64,
}

pub fn constant_a_report(beta: f64, n_pts: u64, w_cutoff: f64, master: u64) -> Result<ConstantAReport> {
    let s = |i| replica_seed(master, "constant-a", i);
    let estimate = whitenoise::estimate_a(beta, n_pts, w_cutoff, 2.0, s(0))?;
    let quadrupled = whitenoise::estimate_a(beta, 4 * n_pts, w_cutoff, 2.0, s(1))?;
    let split_three = whitenoise::estimate_a(beta, n_pts, w_cutoff, 3.0, s(2))?;
    let z = |a: &AEstimate, b: &AEstimate| (a.a - b.a).abs() / a.stderr.hypot(b.stderr);
    let far_field = whitenoise::far_field_profile(beta, &[8.0, 16.0, 32.0], n_pts, s(3))?;
    let mean = far_field.iter().map(|p| p.scaled).sum::<f64>() / far_field.len() as f64;
    let spread = far_field.iter().map(|p| (p.scaled / mean - 1.0).abs()).fold(0.0, f64::max);
    let draws = 1_000_000;
    Ok(ConstantAReport {
        beta,
        budget_z: z(&estimate, &quadrupled),
        split_z: z(&estimate, &split_three),
        estimate,
        quadrupled,
        split_three,
        far_field,
        far_field_spread: spread,
        violations: whitenoise::symmetrized_violations(beta, draws, s(4)),
        draws,
    })
}
