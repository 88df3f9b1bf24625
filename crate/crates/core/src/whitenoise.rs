//! Fluctuations of `|mu(Q(z, r))|^2` as white noise: the field `W_r`, its
//! integrated sheet `B_r`, the normalizing constant `A` and tests on sheets.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos::ChaosField;
use crate::error::{invalid, Error, Result};
use crate::geom::{Point, Rect};
use crate::moments::{batch_mean, MomentEstimate, PowerDisc, BATCHES};
use crate::rng;

/// `W_r(z) = r^{beta^2 - 5} (|mu(Q(z, r))|^2 - m_2(r))` at `z = (i h, j h)`,
/// `0 <= i, j < 1/h`.
#[derive(Clone, Debug)]
pub struct WField {
    pub values: Array2<f64>,
    pub spacing: f64,
    pub r: f64,
    pub beta: f64,
    pub mean_subtracted_with: MomentEstimate,
}

pub fn build_wfield(chaos: &ChaosField, r: f64, m2: &MomentEstimate) -> Result<WField> {
    let h = chaos.spacing;
    let n = (1.0 / h).round();
    if (n * h - 1.0).abs() > 1e-9 {
        return invalid(format!("spacing {h} does not divide the unit interval"));
    }
    if r < 4.0 * h * (1.0 - 1e-12) {
        return Err(Error::Resolution(format!("r = {r} below four spacings")));
    }
    let fp = chaos.footprint();
    let tol = 1e-9 * h;
    if fp.lo()[0] > -2.0 * r + tol || fp.lo()[1] > -2.0 * r + tol || fp.hi()[0] < 1.0 + 2.0 * r - tol || fp.hi()[1] < 1.0 + 2.0 * r - tol {
        return Err(Error::OutOfFootprint(format!("footprint does not cover [0,1]^2 grown by {}", 2.0 * r)));
    }
    let n = n as usize;
    let scale = r.powf(chaos.beta * chaos.beta - 5.0);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let z = [i as f64 * h, j as f64 * h];
                    Ok(scale * (chaos.integrate_square(z, r)?.norm_sqr() - m2.value))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let values = Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]);
    Ok(WField { values, spacing: h, r, beta: chaos.beta, mean_subtracted_with: m2.clone() })
}

/// `B(s, t)` on the grid `s, t in {0, h, ..., 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SheetSample {
    pub values: Array2<f64>,
    pub spacing: f64,
    pub r: f64,
    pub a: f64,
}

/// `B(s, t) = sqrt(A) h^2 sum_{z_i < s, z_j < t} W(z)`.
pub fn build_sheet(wf: &WField, a: f64) -> Result<SheetSample> {
    if !(a > 0.0) {
        return invalid("A must be positive");
    }
    let (n, _) = wf.values.dim();
    let w = a.sqrt() * wf.spacing * wf.spacing;
    let mut b = Array2::<f64>::zeros((n + 1, n + 1));
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += wf.values[[i, j]] * w;
            b[[i + 1, j + 1]] = b[[i, j + 1]] + row;
        }
    }
    Ok(SheetSample { values: b, spacing: wf.spacing, r: wf.r, a })
}

impl SheetSample {
    pub fn at(&self, s: f64, t: f64) -> Result<f64> {
        let k = |v: f64| {
            let i = (v / self.spacing).round();
            if (i * self.spacing - v).abs() > 1e-9 || i < 0.0 || i as usize >= self.values.dim().0 {
                return invalid(format!("{v} is not a sheet grid point"));
            }
            Ok(i as usize)
        };
        Ok(self.values[[k(s)?, k(t)?]])
    }

    /// Keep every `k`-th grid line; values at the kept points are unchanged.
    pub fn coarsen(&self, k: usize) -> Result<SheetSample> {
        let n = self.values.dim().0 - 1;
        if k == 0 || n % k != 0 {
            return invalid(format!("{k} does not divide the grid size {n}"));
        }
        let m = n / k + 1;
        Ok(SheetSample {
            values: Array2::from_shape_fn((m, m), |(i, j)| self.values[[i * k, j * k]]),
            spacing: self.spacing * k as f64,
            r: self.r,
            a: self.a,
        })
    }
}

/// Brownian sheet on a `g x g` grid from direct Gaussian increments.
pub fn brownian_sheet(g: usize, seed: u64) -> SheetSample {
    let mut r = rng::stream(seed);
    let h = 1.0 / g as f64;
    let mut b = Array2::<f64>::zeros((g + 1, g + 1));
    for i in 0..g {
        let mut row = 0.0;
        for j in 0..g {
            row += h * r.sample::<f64, _>(StandardNormal);
            b[[i + 1, j + 1]] = b[[i, j + 1]] + row;
        }
    }
    SheetSample { values: b, spacing: h, r: 0.0, a: 1.0 }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub const MIN_REPLICAS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub s: f64,
    pub t: f64,
    pub mean_square: f64,
    pub stderr: f64,
    /// `E B(s, t)^2 / (s t)`; NaN on the axes.
    pub ratio: f64,
}

impl VarianceRow {
    pub const CSV_HEADER: &'static str = "s,t,mean_square,stderr,ratio";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.s, self.t, self.mean_square, self.stderr, self.ratio)
    }
}

pub fn variance_test(sheets: &[SheetSample], probes: &[(f64, f64)]) -> Result<Vec<VarianceRow>> {
    if sheets.len() < MIN_REPLICAS {
        return Err(Error::InsufficientData(format!("{} replicas, need {MIN_REPLICAS}", sheets.len())));
    }
    probes
        .iter()
        .map(|&(s, t)| {
            let sq = sheets.iter().map(|b| b.at(s, t).map(|v| v * v)).collect::<Result<Vec<f64>>>()?;
            let (m, se) = mean_se(&sq);
            let st = s * t;
            Ok(VarianceRow { s, t, mean_square: m, stderr: se, ratio: if st > 0.0 { m / st } else { f64::NAN } })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    /// Pearson correlation of `B(s,t) - B(s',t')` with `B(s',t')`.
    pub correlation: f64,
    pub stderr: f64,
    pub distance_correlation: f64,
    /// The increment vanishes identically.
    pub degenerate: bool,
}

impl IndependenceReport {
    pub fn z(&self) -> f64 {
        self.correlation / self.stderr
    }
}

pub fn independence_test(sheets: &[SheetSample], inner: (f64, f64), outer: (f64, f64)) -> Result<IndependenceReport> {
    if outer.0 < inner.0 || outer.1 < inner.1 {
        return invalid("outer probe must dominate the inner one");
    }
    if sheets.len() < 3 {
        return Err(Error::InsufficientData("need at least three sheets".into()));
    }
    let a = sheets.iter().map(|b| b.at(inner.0, inner.1)).collect::<Result<Vec<f64>>>()?;
    let o = sheets.iter().map(|b| b.at(outer.0, outer.1)).collect::<Result<Vec<f64>>>()?;
    let d: Vec<f64> = o.iter().zip(&a).map(|(x, y)| x - y).collect();
    let n = a.len() as f64;
    if inner == outer || d.iter().all(|v| *v == 0.0) {
        return Ok(IndependenceReport { correlation: f64::NAN, stderr: f64::NAN, distance_correlation: f64::NAN, degenerate: true });
    }
    let rho = pearson(&d, &a);
    Ok(IndependenceReport {
        correlation: rho,
        stderr: (1.0 - rho * rho) / (n - 3.0).sqrt(),
        distance_correlation: distance_correlation(&d, &a),
        degenerate: false,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Sample distance correlation.
pub fn distance_correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let centred = |v: &[f64]| {
        let mut d = Array2::from_shape_fn((n, n), |(i, j)| (v[i] - v[j]).abs());
        let rows: Vec<f64> = (0..n).map(|i| d.row(i).sum() / n as f64).collect();
        let all = rows.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            for j in 0..n {
                d[[i, j]] += all - rows[i] - rows[j];
            }
        }
        d
    };
    let (a, b) = (centred(x), centred(y));
    let dxy = (&a * &b).sum();
    let dxx = (&a * &a).sum();
    let dyy = (&b * &b).sum();
    if dxx * dyy <= 0.0 {
        return 0.0;
    }
    (dxy / (dxx * dyy).sqrt()).max(0.0).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossScaleReport {
    pub r: f64,
    pub s: f64,
    pub cross: f64,
    pub cross_stderr: f64,
    pub var_r: f64,
    pub var_r_stderr: f64,
    pub var_s: f64,
    pub var_s_stderr: f64,
    /// `E|B_r(1,1) - B_s(1,1)|^2`.
    pub gap: f64,
}

/// `E[B_r(1,1) B_s(1,1)]` over sheets built from the same chaos replicas.
pub fn cross_scale_test(pairs: &[(SheetSample, SheetSample)]) -> Result<CrossScaleReport> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData("need at least three replicas".into()));
    }
    let (r, s) = (pairs[0].0.r, pairs[0].1.r);
    if pairs.iter().any(|(a, b)| a.r != r || b.r != s) || r > s {
        return invalid("pairs must share scales r <= s");
    }
    let br = pairs.iter().map(|(a, _)| a.at(1.0, 1.0)).collect::<Result<Vec<f64>>>()?;
    let bs = pairs.iter().map(|(_, b)| b.at(1.0, 1.0)).collect::<Result<Vec<f64>>>()?;
    let prod: Vec<f64> = br.iter().zip(&bs).map(|(a, b)| a * b).collect();
    let gap: Vec<f64> = br.iter().zip(&bs).map(|(a, b)| (a - b).powi(2)).collect();
    let (cross, cross_stderr) = mean_se(&prod);
    let (var_r, var_r_stderr) = mean_se(&br.iter().map(|v| v * v).collect::<Vec<_>>());
    let (var_s, var_s_stderr) = mean_se(&bs.iter().map(|v| v * v).collect::<Vec<_>>());
    Ok(CrossScaleReport { r, s, cross, cross_stderr, var_r, var_r_stderr, var_s, var_s_stderr, gap: mean_se(&gap).0 })
}

// ---------------------------------------------------------------------------
// The constant A

/// `log r(x, y, u, v) / beta^2 = log|x-u| + log|y-v| - log|x-v| - log|y-u|`.
fn log_cross_ratio(x: Point, y: Point, u: Point, v: Point) -> f64 {
    let l = |a: Point, b: Point| (a[0] - b[0]).hypot(a[1] - b[1]).ln();
    l(x, u) + l(y, v) - l(x, v) - l(y, u)
}

fn log_pair_weight(x: Point, y: Point, u: Point, v: Point) -> f64 {
    let l = |a: Point, b: Point| (a[0] - b[0]).hypot(a[1] - b[1]).ln();
    l(x, y) + l(u, v)
}

/// `(r - 1) / (|x-y|^{beta^2} |u-v|^{beta^2})`.
pub fn raw_integrand(b2: f64, x: Point, y: Point, u: Point, v: Point) -> f64 {
    (b2 * log_cross_ratio(x, y, u, v)).exp_m1() * (-b2 * log_pair_weight(x, y, u, v)).exp()
}

/// `(r + 1/r - 2) / (2 |x-y|^{beta^2} |u-v|^{beta^2})`, written as `2 sinh^2(log r / 2)`.
pub fn symmetrized_integrand(b2: f64, x: Point, y: Point, u: Point, v: Point) -> f64 {
    let s = (0.5 * b2 * log_cross_ratio(x, y, u, v)).sinh();
    2.0 * s * s * (-b2 * log_pair_weight(x, y, u, v)).exp()
}

// Three pairings: (x-y, u-v), (x-v, y-u), (x-u, y-v).
struct Mixture {
    weights: [f64; 3],
    disc: PowerDisc,
}

impl Mixture {
    fn new(beta: f64, weights: [f64; 3]) -> Self {
        Mixture { weights, disc: PowerDisc::new((beta * beta).clamp(0.5, 1.95), 2.0 * 2f64.sqrt()) }
    }

    fn sample<R: Rng>(&self, r: &mut R, q0: &Rect, qw: &Rect) -> [Point; 4] {
        let t: f64 = r.random();
        let k = if t < self.weights[0] { 0 } else if t < self.weights[0] + self.weights[1] { 1 } else { 2 };
        let uni = |r: &mut R, q: &Rect| q.at_unit([r.random(), r.random()]);
        let off = |r: &mut R, p: Point| {
            let d = self.disc.sample(r);
            [p[0] + d[0], p[1] + d[1]]
        };
        match k {
            0 => {
                let x = uni(r, q0);
                let u = uni(r, qw);
                [x, off(r, x), u, off(r, u)]
            }
            1 => {
                let x = uni(r, q0);
                let u = uni(r, qw);
                let v = off(r, x);
                [x, off(r, u), u, v]
            }
            _ => {
                let x = uni(r, q0);
                let y = uni(r, q0);
                [x, y, off(r, x), off(r, y)]
            }
        }
    }

    // Density of (x, y, u, v) given both squares have area 4.
    fn density(&self, p: &[Point; 4]) -> f64 {
        let [x, y, u, v] = *p;
        let d = |a: Point, b: Point| self.disc.density([b[0] - a[0], b[1] - a[1]]);
        let a = 1.0 / 16.0;
        a * (self.weights[0] * d(x, y) * d(u, v) + self.weights[1] * d(x, v) * d(u, y) + self.weights[2] * d(x, u) * d(y, v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AEstimate {
    pub beta: f64,
    pub a: f64,
    pub stderr: f64,
    /// `A^{-1}` and its parts.
    pub inverse: f64,
    pub inverse_stderr: f64,
    pub near: f64,
    pub far: f64,
    pub tail: f64,
    pub split_radius: f64,
    pub w_cutoff: f64,
    /// Fitted `a` in `f(w) ~ a |w|^{-4}` on `[w_cutoff / 2, w_cutoff]`.
    pub tail_fit: f64,
    pub n_evals: u64,
}

/// `A^{-1} = int_{R^2} dw int_{Q(0,1)^2} dx dy int_{Q(w,1)^2} du dv (r - 1) / (|x-y|^{beta^2} |u-v|^{beta^2})`,
/// raw integrand for `|w| <= split`, symmetrized beyond, `a |w|^{-4}` tail past `w_cutoff`.
pub fn estimate_a(beta: f64, n_pts: u64, w_cutoff: f64, split: f64, seed: u64) -> Result<AEstimate> {
    let b2 = beta * beta;
    if !(b2 > 0.0 && b2 < 2.0) {
        return invalid("beta^2 must lie in (0, 2)");
    }
    if !(w_cutoff >= 8.0) || !(split >= 2.0 && split < w_cutoff / 2.0) {
        return invalid("need w_cutoff >= 8 and 2 <= split < w_cutoff / 2");
    }
    let per = (n_pts / BATCHES as u64).max(1) as usize;
    let near_mix = Mixture::new(beta, [0.5, 0.25, 0.25]);
    let far_mix = Mixture::new(beta, [0.8, 0.1, 0.1]);
    let q0 = Rect::square([0.0, 0.0], 1.0);
    let (s2, w2) = (split.powi(-2), w_cutoff.powi(-2));
    let z_far = PI * (s2 - w2);
    let parts: Vec<(f64, f64, f64, bool)> = (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::substream(seed, "constant-a", b as u64);
            let (mut near, mut far, mut shell, mut negative) = (0.0, 0.0, 0.0, false);
            let area_near = PI * split * split;
            for _ in 0..per {
                // near: w uniform on the disc
                let (t, a): (f64, f64) = (r.random(), 2.0 * PI * r.random::<f64>());
                let rho = split * t.sqrt();
                let qw = Rect::square([rho * a.cos(), rho * a.sin()], 1.0);
                let p = near_mix.sample(&mut r, &q0, &qw);
                if q0.contains(p[0]) && q0.contains(p[1]) && qw.contains(p[2]) && qw.contains(p[3]) {
                    near += raw_integrand(b2, p[0], p[1], p[2], p[3]) * area_near / near_mix.density(&p);
                }
                // far: |w| with density |w|^{-4} / z_far
                let (t, a): (f64, f64) = (r.random(), 2.0 * PI * r.random::<f64>());
                let rho = (s2 - t * (s2 - w2)).powf(-0.5);
                let qw = Rect::square([rho * a.cos(), rho * a.sin()], 1.0);
                let p = far_mix.sample(&mut r, &q0, &qw);
                if q0.contains(p[0]) && q0.contains(p[1]) && qw.contains(p[2]) && qw.contains(p[3]) {
                    let f = symmetrized_integrand(b2, p[0], p[1], p[2], p[3]);
                    negative |= f < 0.0;
                    let v = f * z_far * rho.powi(4) / far_mix.density(&p);
                    far += v;
                    if rho >= 0.5 * w_cutoff {
                        shell += v;
                    }
                }
            }
            let k = per as f64;
            (near / k, far / k, shell / k, negative)
        })
        .collect();
    if parts.iter().any(|p| p.3) {
        return Err(Error::Overflow("negative symmetrized integrand".into()));
    }
    let totals: Vec<f64> = parts.iter().map(|p| p.0 + p.1 + p.2 / 3.0).collect();
    let (inv, inv_se) = batch_mean(&totals);
    let mean = |f: fn(&(f64, f64, f64, bool)) -> f64| parts.iter().map(f).sum::<f64>() / parts.len() as f64;
    let (near, far, shell) = (mean(|p| p.0), mean(|p| p.1), mean(|p| p.2));
    if !(inv > 0.0) {
        return Err(Error::InvalidParameter(format!("nonpositive integral {inv}: sampling fault")));
    }
    Ok(AEstimate {
        beta,
        a: 1.0 / inv,
        stderr: inv_se / (inv * inv),
        inverse: inv,
        inverse_stderr: inv_se,
        near,
        far,
        tail: shell / 3.0,
        split_radius: split,
        w_cutoff,
        tail_fit: shell * w_cutoff * w_cutoff / (3.0 * PI),
        n_evals: 2 * per as u64 * BATCHES as u64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarFieldPoint {
    pub w: f64,
    /// `f(w) |w|^4`
    pub scaled: f64,
    pub stderr: f64,
}

/// `f(w) |w|^4` at `w = (|w|, 0)` from the symmetrized integrand.
pub fn far_field_profile(beta: f64, radii: &[f64], n_pts: u64, seed: u64) -> Result<Vec<FarFieldPoint>> {
    let b2 = beta * beta;
    if !(b2 > 0.0 && b2 < 2.0) {
        return invalid("beta^2 must lie in (0, 2)");
    }
    let mix = Mixture::new(beta, [1.0, 0.0, 0.0]);
    let q0 = Rect::square([0.0, 0.0], 1.0);
    let per = (n_pts / BATCHES as u64).max(1) as usize;
    radii
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            if w <= 2.0 * 2f64.sqrt() {
                return invalid("far-field radius must separate the squares");
            }
            let qw = Rect::square([w, 0.0], 1.0);
            let batches: Vec<f64> = (0..BATCHES)
                .into_par_iter()
                .map(|b| {
                    let mut r = rng::substream(seed, "far-field", (k * BATCHES + b) as u64);
                    let mut s = 0.0;
                    for _ in 0..per {
                        let p = mix.sample(&mut r, &q0, &qw);
                        if q0.contains(p[1]) && qw.contains(p[3]) {
                            s += symmetrized_integrand(b2, p[0], p[1], p[2], p[3]) / mix.density(&p);
                        }
                    }
                    s / per as f64
                })
                .collect();
            let (m, se) = batch_mean(&batches);
            let w4 = w.powi(4);
            Ok(FarFieldPoint { w, scaled: m * w4, stderr: se * w4 })
        })
        .collect()
}

/// Count negative values of the symmetrized integrand over random configurations
/// with both squares anywhere in `|w| < 64`.
pub fn symmetrized_violations(beta: f64, draws: u64, seed: u64) -> u64 {
    let b2 = beta * beta;
    let per = draws.div_ceil(BATCHES as u64);
    (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::substream(seed, "symmetrized", b as u64);
            let mut bad = 0;
            for _ in 0..per {
                let w = [64.0 * (r.random::<f64>() - 0.5), 64.0 * (r.random::<f64>() - 0.5)];
                let mut pt = |c: Point| [c[0] + 2.0 * r.random::<f64>() - 1.0, c[1] + 2.0 * r.random::<f64>() - 1.0];
                let (x, y, u, v) = (pt([0.0; 2]), pt([0.0; 2]), pt(w), pt(w));
                let f = symmetrized_integrand(b2, x, y, u, v);
                if f < 0.0 || f.is_nan() {
                    bad += 1;
                }
            }
            bad
        })
        .sum()
}
