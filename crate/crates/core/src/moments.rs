//! Moments `E|mu(f)|^{2N}` from the charge-energy representation and from
//! field replicas.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{invalid, Error, Result};
use crate::field::LagTable;
use crate::geom::{dist, Point, Rect};
use crate::rng;

/// Primed covariance `G'(x, y)` used inside moment integrals.
pub trait PairKernel: Sync {
    fn g(&self, x: Point, y: Point) -> f64;
}

/// Continuum primed covariance of a model.
pub struct ModelKernel<'a>(pub &'a CovarianceModel);

impl PairKernel for ModelKernel<'_> {
    fn g(&self, x: Point, y: Point) -> f64 {
        self.0.primed(x, y).unwrap_or(f64::INFINITY)
    }
}

/// Exact-scaling kernel after circle averaging at radius `eps`:
/// `log+(R/d) - log R` with `log d` replaced by
/// `L(d) = (1/pi) int_0^pi log max(d, 2 eps sin(psi/2)) dpsi`.
pub struct CircleAverageKernel {
    pub r: f64,
    pub eps: f64,
}

impl CircleAverageKernel {
    pub fn smoothed_log(&self, d: f64) -> f64 {
        let e = self.eps;
        if d >= 2.0 * e {
            return d.ln();
        }
        // psi* with 2 eps sin(psi*/2) = d
        let ps = 2.0 * (d / (2.0 * e)).asin();
        let (gx, gw) = crate::covariance::gauss_legendre_8();
        let mut s = if d > 0.0 { ps * d.ln() } else { 0.0 };
        // log(2 eps sin(psi/2)) = log(eps psi) + log(sinc(psi/2)); the first
        // part integrates in closed form
        let prim = |p: f64| if p > 0.0 { p * (e * p).ln() - p } else { 0.0 };
        s += prim(PI) - prim(ps);
        let panels = 8;
        let w = (PI - ps) / panels as f64;
        for k in 0..panels {
            let a = ps + k as f64 * w;
            for (x, wt) in gx.iter().zip(gw.iter()) {
                let half = 0.5 * (a + 0.5 * w * (x + 1.0));
                s += 0.5 * w * wt * (half.sin() / half).ln();
            }
        }
        s / PI
    }
}

impl PairKernel for CircleAverageKernel {
    fn g(&self, x: Point, y: Point) -> f64 {
        let d = dist(x, y);
        if d >= self.r - 2.0 * self.eps {
            // outside the pure-log range fall back to the bare kernel
            return (self.r / d).ln().max(0.0) - self.r.ln();
        }
        -self.smoothed_log(d)
    }
}

/// Primed covariance of a lattice field: points are snapped to the cell that
/// contains them and the exact lattice covariance is read off a lag table.
pub struct LatticeKernel {
    pub table: LagTable,
    pub origin: Point,
    pub log_cr: f64,
}

impl LatticeKernel {
    #[inline]
    fn cell(&self, p: Point) -> (isize, isize) {
        let h = self.table.spacing;
        (((p[0] - self.origin[0]) / h).floor() as isize, ((p[1] - self.origin[1]) / h).floor() as isize)
    }

    /// Exact `E|mu(Q)|^2` of the lattice chaos with the [`crate::chaos::Normalization::Conformal`] scaling,
    /// for `Q` a union of whole cells.
    pub fn m2_exact(&self, beta: f64, q: &Rect) -> Result<f64> {
        let h = self.table.spacing;
        let k = |lo: f64, hi: f64, o: f64| -> Result<(isize, isize)> {
            let a = ((lo - o) / h).round();
            let b = ((hi - o) / h).round();
            if ((lo - o) / h - a).abs() > 1e-6 || ((hi - o) / h - b).abs() > 1e-6 {
                return invalid("rectangle is not a union of lattice cells");
            }
            Ok((a as isize, b as isize))
        };
        let (a0, a1) = k(q.lo()[0], q.hi()[0], self.origin[0])?;
        let (b0, b1) = k(q.lo()[1], q.hi()[1], self.origin[1])?;
        let (n1, n2) = ((a1 - a0) as usize, (b1 - b0) as usize);
        if n1 > self.table.max_lag() + 1 || n2 > self.table.max_lag() + 1 {
            return Err(Error::OutOfFootprint("rectangle larger than the lag table".into()));
        }
        let b2 = beta * beta;
        let mut s = 0.0;
        for di in 0..n1 {
            let ci = if di == 0 { 1.0 } else { 2.0 } * (n1 - di) as f64;
            for dj in 0..n2 {
                let cj = if dj == 0 { 1.0 } else { 2.0 } * (n2 - dj) as f64;
                s += ci * cj * (b2 * (self.table.values[[di, dj]] - self.log_cr)).exp();
            }
        }
        Ok(s * h.powi(4))
    }
}

impl PairKernel for LatticeKernel {
    fn g(&self, x: Point, y: Point) -> f64 {
        let (a, b) = (self.cell(x), self.cell(y));
        let (di, dj) = ((a.0 - b.0).unsigned_abs(), (a.1 - b.1).unsigned_abs());
        let m = self.table.max_lag();
        if di > m || dj > m {
            return f64::NEG_INFINITY;
        }
        self.table.values[[di, dj]] - self.log_cr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub method: String,
    pub beta: f64,
    pub order_2n: usize,
    pub geometry: String,
    pub value: f64,
    pub stderr: f64,
    pub n_evals: u64,
    pub seed: u64,
}

impl MomentEstimate {
    pub fn csv_header() -> &'static str {
        "method,beta,order_2N,geometry,value,stderr,n_evals,seed"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e},{:e},{},{}",
            self.method, self.beta, self.order_2n, self.geometry, self.value, self.stderr, self.n_evals, self.seed
        )
    }

    /// `|a - b| / sqrt(se_a^2 + se_b^2)`.
    pub fn z_score(&self, other: &MomentEstimate) -> f64 {
        (self.value - other.value).abs() / self.stderr.hypot(other.stderr)
    }
}

pub fn geometry_label(q: &Rect) -> String {
    format!("rect({};{};{};{})", q.center[0], q.center[1], 2.0 * q.half[0], 2.0 * q.half[1])
}

pub(crate) const BATCHES: usize = 32;

pub(crate) fn batch_mean(batches: &[f64]) -> (f64, f64) {
    let n = batches.len() as f64;
    let mean = batches.iter().sum::<f64>() / n;
    let var = batches.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Radial proposal with density `c |d|^{-gamma}` on the disc of radius `rho`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PowerDisc {
    gamma: f64,
    rho: f64,
    norm: f64,
}

impl PowerDisc {
    pub(crate) fn new(gamma: f64, rho: f64) -> Self {
        let norm = (2.0 - gamma) / (2.0 * PI * rho.powf(2.0 - gamma));
        PowerDisc { gamma, rho, norm }
    }

    pub(crate) fn sample<R: Rng>(&self, r: &mut R) -> Point {
        let u: f64 = r.random();
        let t = self.rho * u.powf(1.0 / (2.0 - self.gamma));
        let a = 2.0 * PI * r.random::<f64>();
        [t * a.cos(), t * a.sin()]
    }

    pub(crate) fn density(&self, d: Point) -> f64 {
        let t = d[0].hypot(d[1]);
        if t >= self.rho || t == 0.0 {
            return 0.0;
        }
        self.norm * t.powf(-self.gamma)
    }
}

fn proposal_exponent(beta: f64) -> f64 {
    (beta * beta).min(1.95)
}

/// `E|mu(Q)|^2 = int_Q int_Q e^{beta^2 G'(x,y)} dx dy` by importance sampling
/// `y - x` from `|d|^{-beta^2}` and stratifying `x`.
pub fn moment2_quadrature(q: &Rect, beta: f64, kernel: &dyn PairKernel, n_pts: u64, seed: u64) -> Result<MomentEstimate> {
    let mut est = MomentEstimate {
        method: "quadrature".into(),
        beta,
        order_2n: 2,
        geometry: geometry_label(q),
        value: 0.0,
        stderr: 0.0,
        n_evals: n_pts,
        seed,
    };
    if beta == 0.0 {
        est.value = q.area() * q.area();
        return Ok(est);
    }
    if !(beta > 0.0 && beta * beta < 2.0) {
        return invalid("beta must lie in [0, sqrt 2)");
    }
    if n_pts < BATCHES as u64 * 4 {
        return invalid("need at least 128 points");
    }
    let prop = PowerDisc::new(proposal_exponent(beta), q.diameter());
    let b2 = beta * beta;
    let per = (n_pts / BATCHES as u64) as usize;
    let k = ((per as f64).sqrt().floor() as usize).max(1);
    let area = q.area();
    let batches: Vec<f64> = (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::substream(seed, "moment2", b as u64);
            let mut s = 0.0;
            for i in 0..per {
                let cell = i % (k * k);
                let u = [
                    ((cell / k) as f64 + r.random::<f64>()) / k as f64,
                    ((cell % k) as f64 + r.random::<f64>()) / k as f64,
                ];
                let x = q.at_unit(u);
                let d = prop.sample(&mut r);
                let y = [x[0] + d[0], x[1] + d[1]];
                if !q.contains(y) {
                    continue;
                }
                let g = kernel.g(x, y);
                s += area * (b2 * g).exp() / prop.density(d);
            }
            s / per as f64
        })
        .collect();
    let (v, se) = batch_mean(&batches);
    est.value = v;
    est.stderr = se;
    Ok(est)
}

/// `E|mu(Q)|^{2N} = int e^{beta^2 E'(x, y)}` over `Q^{2N}` by sequential
/// importance sampling: charges are placed alternately, each new one either
/// uniformly or near an earlier charge of the opposite sign.
pub fn moment2n_importance(
    q: &Rect,
    beta: f64,
    n: usize,
    kernel: &dyn PairKernel,
    n_pts: u64,
    seed: u64,
) -> Result<MomentEstimate> {
    let mut est = MomentEstimate {
        method: "importance".into(),
        beta,
        order_2n: 2 * n,
        geometry: geometry_label(q),
        value: 1.0,
        stderr: 0.0,
        n_evals: n_pts,
        seed,
    };
    if n == 0 {
        return Ok(est);
    }
    if beta == 0.0 {
        est.value = q.area().powi(2 * n as i32);
        return Ok(est);
    }
    if !(beta > 0.0 && beta * beta < 2.0) {
        return invalid("beta must lie in [0, sqrt 2)");
    }
    if n_pts < BATCHES as u64 * 4 {
        return invalid("need at least 128 points");
    }
    let prop = PowerDisc::new(proposal_exponent(beta), q.diameter());
    let b2 = beta * beta;
    let area = q.area();
    let p_uniform = 0.2;
    let per = (n_pts / BATCHES as u64) as usize;
    let m = 2 * n;
    // charge k is positive when k is even
    let batches: Vec<f64> = (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::substream(seed, "moment2n", b as u64);
            let mut z = vec![[0.0; 2]; m];
            let mut s = 0.0;
            'sample: for _ in 0..per {
                z[0] = q.at_unit([r.random(), r.random()]);
                for k in 1..m {
                    let opposite: Vec<usize> = (0..k).filter(|j| (j + k) % 2 == 1).collect();
                    if r.random::<f64>() < p_uniform {
                        z[k] = q.at_unit([r.random(), r.random()]);
                    } else {
                        let j = opposite[r.random_range(0..opposite.len())];
                        let d = prop.sample(&mut r);
                        z[k] = [z[j][0] + d[0], z[j][1] + d[1]];
                        if !q.contains(z[k]) {
                            continue 'sample;
                        }
                    }
                }
                let mut log_q = -area.ln();
                for k in 1..m {
                    let opp: Vec<usize> = (0..k).filter(|j| (j + k) % 2 == 1).collect();
                    let near: f64 = opp.iter().map(|&j| prop.density([z[k][0] - z[j][0], z[k][1] - z[j][1]])).sum::<f64>()
                        / opp.len() as f64;
                    log_q += (p_uniform / area + (1.0 - p_uniform) * near).ln();
                }
                let mut e = 0.0;
                for i in 0..m {
                    for j in i + 1..m {
                        let sign = if (i + j) % 2 == 1 { 1.0 } else { -1.0 };
                        e += sign * kernel.g(z[i], z[j]);
                    }
                }
                s += (b2 * e - log_q).exp();
            }
            s / per as f64
        })
        .collect();
    let (v, se) = batch_mean(&batches);
    est.value = v;
    est.stderr = se;
    Ok(est)
}

/// Crude Monte Carlo of the same integral with uniform points; only useful
/// when `beta^2` is small enough for the integrand to be square integrable.
pub fn moment2n_uniform(q: &Rect, beta: f64, n: usize, kernel: &dyn PairKernel, n_pts: u64, seed: u64) -> Result<MomentEstimate> {
    let b2 = beta * beta;
    let area = q.area();
    let m = 2 * n;
    let per = (n_pts / BATCHES as u64) as usize;
    let batches: Vec<f64> = (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::substream(seed, "uniform", b as u64);
            let mut z = vec![[0.0; 2]; m];
            let mut s = 0.0;
            for _ in 0..per {
                for p in z.iter_mut() {
                    *p = q.at_unit([r.random(), r.random()]);
                }
                let mut e = 0.0;
                for i in 0..m {
                    for j in i + 1..m {
                        let sign = if (i + j) % 2 == 1 { 1.0 } else { -1.0 };
                        e += sign * kernel.g(z[i], z[j]);
                    }
                }
                s += (b2 * e).exp();
            }
            s / per as f64 * area.powi(m as i32)
        })
        .collect();
    let (v, se) = batch_mean(&batches);
    Ok(MomentEstimate {
        method: "uniform".into(),
        beta,
        order_2n: m,
        geometry: geometry_label(q),
        value: v,
        stderr: se,
        n_evals: n_pts,
        seed,
    })
}

/// Sample mean of `|mu|^{2N}` over replica masses, with batch-means stderr.
pub fn mc_moment(masses: &[Complex64], n: usize, beta: f64, geometry: &str, seed: u64) -> Result<MomentEstimate> {
    let mut est = MomentEstimate {
        method: "field_mc".into(),
        beta,
        order_2n: 2 * n,
        geometry: geometry.into(),
        value: 1.0,
        stderr: 0.0,
        n_evals: masses.len() as u64,
        seed,
    };
    if n == 0 {
        return Ok(est);
    }
    if masses.len() < 2 {
        return Err(Error::InsufficientData("need at least two replicas".into()));
    }
    let vals: Vec<f64> = masses.iter().map(|z| z.norm_sqr().powi(n as i32)).collect();
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    est.value = mean;
    est.stderr = (var / k).sqrt();
    Ok(est)
}

/// Check of `E|nu(A)|^{2N} / (N!)^2 >= prod_j E|nu(A_j)|^{2N_j} / (N_j!)^2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecursionCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// `(lhs - rhs) / combined stderr`
    pub margin_sigmas: f64,
}

pub fn recursion_check(whole: &MomentEstimate, parts: &[(&MomentEstimate, usize)]) -> RecursionCheck {
    let fact = |k: usize| (1..=k).map(|i| i as f64).product::<f64>();
    let n = whole.order_2n / 2;
    let lhs = whole.value / fact(n).powi(2);
    let lhs_se = whole.stderr / fact(n).powi(2);
    let mut rhs = 1.0;
    let mut rel2 = 0.0;
    for (e, nj) in parts {
        rhs *= e.value / fact(*nj).powi(2);
        rel2 += (e.stderr / e.value).powi(2);
    }
    let se = lhs_se.hypot(rhs * rel2.sqrt());
    RecursionCheck { lhs, rhs, margin_sigmas: (lhs - rhs) / se.max(1e-300) }
}

/// `C` implied by `m_{2N} = C^N (ab)^{(2 - beta^2/2) N} N^{beta^2 N / 2}` for an
/// `a x b` rectangle.
pub fn rectangle_constant(m: &MomentEstimate, a: f64, b: f64) -> f64 {
    let n = (m.order_2n / 2) as f64;
    let b2 = m.beta * m.beta;
    let scale = (a * b).powf((2.0 - b2 / 2.0) * n) * n.powf(b2 * n / 2.0);
    (m.value / scale).powf(1.0 / n)
}

/// `m_{2N}` of the `a x b` rectangle centred at the origin together with the
/// implied constant.
pub fn rectangle_moment_fit(
    a: f64,
    b: f64,
    beta: f64,
    n: usize,
    kernel: &dyn PairKernel,
    n_pts: u64,
    seed: u64,
) -> Result<(MomentEstimate, f64)> {
    if n == 0 {
        return invalid("N must be positive");
    }
    let q = Rect::new([0.0, 0.0], [a / 2.0, b / 2.0]);
    let m = if n == 1 {
        moment2_quadrature(&q, beta, kernel, n_pts, seed)?
    } else {
        moment2n_importance(&q, beta, n, kernel, n_pts, seed)?
    };
    let c = rectangle_constant(&m, a, b);
    Ok((m, c))
}

/// `int_{B(0,1)^p} exp(-(beta^2/2) sum_j log min_{i != j} |z_i - z_j|) dz`.
pub fn min_distance_integral(p: usize, beta: f64, n_pts: u64, seed: u64) -> Result<MomentEstimate> {
    let mut est = MomentEstimate {
        method: "min_distance".into(),
        beta,
        order_2n: p,
        geometry: "unit_disc".into(),
        value: PI.powi(p as i32),
        stderr: 0.0,
        n_evals: n_pts,
        seed,
    };
    if p < 2 {
        return invalid("need at least two points");
    }
    if beta == 0.0 {
        return Ok(est);
    }
    let b2 = beta * beta;
    let prop = PowerDisc::new(proposal_exponent(beta), 2.0);
    let p_uniform = 0.3;
    let per = (n_pts / BATCHES as u64) as usize;
    let in_disc = |z: Point| z[0] * z[0] + z[1] * z[1] < 1.0;
    let uniform_disc = |r: &mut rng::StreamRng| loop {
        let z = [2.0 * r.random::<f64>() - 1.0, 2.0 * r.random::<f64>() - 1.0];
        if in_disc(z) {
            break z;
        }
    };
    let batches: Vec<f64> = (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::substream(seed, "mindist", b as u64);
            let mut z = vec![[0.0; 2]; p];
            let mut s = 0.0;
            'sample: for _ in 0..per {
                z[0] = uniform_disc(&mut r);
                for k in 1..p {
                    if r.random::<f64>() < p_uniform {
                        z[k] = uniform_disc(&mut r);
                    } else {
                        let j = r.random_range(0..k);
                        let d = prop.sample(&mut r);
                        z[k] = [z[j][0] + d[0], z[j][1] + d[1]];
                        if !in_disc(z[k]) {
                            continue 'sample;
                        }
                    }
                }
                let mut log_q = -PI.ln();
                for k in 1..p {
                    let near: f64 =
                        (0..k).map(|j| prop.density([z[k][0] - z[j][0], z[k][1] - z[j][1]])).sum::<f64>() / k as f64;
                    log_q += (p_uniform / PI + (1.0 - p_uniform) * near).ln();
                }
                let mut log_f = 0.0;
                for j in 0..p {
                    let m = (0..p).filter(|&i| i != j).map(|i| dist(z[i], z[j])).fold(f64::INFINITY, f64::min);
                    log_f -= 0.5 * b2 * m.ln();
                }
                s += (log_f - log_q).exp();
            }
            s / per as f64
        })
        .collect();
    let (v, se) = batch_mean(&batches);
    est.value = v;
    est.stderr = se;
    Ok(est)
}
