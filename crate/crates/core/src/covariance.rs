//! Covariance kernels of the log-correlated fields and the charge energies
//! built from them.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geom::{dist, Point};

/// Radial profile `k` on `[0, 1]` with `k(0) = 1`, extended by zero.
///
/// Stored as a clamped cubic spline over a uniform table; each interval keeps
/// its polynomial in powers of `t` so that integrals against `t^(s-1)` are
/// exact.
#[derive(Clone, Debug)]
pub struct SeedKernel {
    step: f64,
    coef: Vec<[f64; 4]>,
}

impl SeedKernel {
    /// Spline through `values[i] = k(i / (len-1))`.
    pub fn from_table(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 4 {
            return invalid("seed table needs at least 4 nodes");
        }
        if (values[0] - 1.0).abs() > 1e-12 {
            return invalid(format!("seed kernel must satisfy k(0) = 1, got {}", values[0]));
        }
        if values[n - 1].abs() > 1e-12 {
            return invalid("seed kernel must vanish at t = 1");
        }
        let h = 1.0 / (n - 1) as f64;
        let slope0 = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
        let slope1 = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
        let m = clamped_spline_moments(values, h, slope0, slope1);
        let mut coef = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            // local form a + b s + c s^2 + d s^3 with s = t - t_i
            let a = values[i];
            let b = (values[i + 1] - values[i]) / h - h * (2.0 * m[i] + m[i + 1]) / 6.0;
            let c = m[i] / 2.0;
            let d = (m[i + 1] - m[i]) / (6.0 * h);
            let t0 = i as f64 * h;
            coef.push([
                a - b * t0 + c * t0 * t0 - d * t0 * t0 * t0,
                b - 2.0 * c * t0 + 3.0 * d * t0 * t0,
                c - 3.0 * d * t0,
                d,
            ]);
        }
        Ok(SeedKernel { step: h, coef })
    }

    /// Wendland's compactly supported profile `(1-t)^8 (1 + 8t + 25t^2 + 32t^3)`,
    /// positive definite in up to three dimensions.
    pub fn wendland(nodes: usize) -> Self {
        let vals: Vec<f64> = (0..=nodes)
            .map(|i| {
                let t = i as f64 / nodes as f64;
                (1.0 - t).powi(8) * (1.0 + 8.0 * t + 25.0 * t * t + 32.0 * t * t * t)
            })
            .collect();
        Self::from_table(&vals).expect("wendland table is valid")
    }

    pub fn eval(&self, t: f64) -> f64 {
        let t = t.abs();
        if t >= 1.0 {
            return 0.0;
        }
        let i = ((t / self.step) as usize).min(self.coef.len() - 1);
        let c = &self.coef[i];
        c[0] + t * (c[1] + t * (c[2] + t * c[3]))
    }

    /// `int_{u0}^{u1} k(rho e^u) (1 - e^{-delta u}) du` for `0 <= u0 <= u1`.
    ///
    /// `u1` may be infinite when `rho > 0`; `delta = inf` drops the damping.
    pub fn band(&self, rho: f64, u0: f64, u1: f64, delta: f64) -> f64 {
        let damp = |u: f64| if delta.is_infinite() { 0.0 } else { (-delta * u).exp() };
        if rho <= 0.0 {
            let width = u1 - u0;
            if delta.is_infinite() {
                return width;
            }
            return width - (damp(u0) - damp(u1)) / delta;
        }
        let t0 = rho * u0.exp();
        let t1 = if u1.is_infinite() { 1.0 } else { (rho * u1.exp()).min(1.0) };
        if t0 >= t1 {
            return 0.0;
        }
        let mut total = 0.0;
        let first = ((t0 / self.step) as usize).min(self.coef.len() - 1);
        for (i, c) in self.coef.iter().enumerate().skip(first) {
            let lo = (i as f64 * self.step).max(t0);
            let hi = ((i + 1) as f64 * self.step).min(t1);
            if lo >= hi {
                if lo >= t1 {
                    break;
                }
                continue;
            }
            // int c_j t^(j-1) dt
            total += c[0] * (hi / lo).ln()
                + c[1] * (hi - lo)
                + c[2] * (hi * hi - lo * lo) / 2.0
                + c[3] * (hi * hi * hi - lo * lo * lo) / 3.0;
            if delta.is_finite() {
                // int c_j t^(j-1) (rho/t)^delta dt
                let (ql, qh) = ((rho / lo).powf(delta), (rho / hi).powf(delta));
                let mut tl = 1.0;
                let mut th = 1.0;
                for (j, cj) in c.iter().enumerate() {
                    let e = j as f64 - delta;
                    let term = if e.abs() < 1e-12 {
                        rho.powi(j as i32) * (hi / lo).ln()
                    } else {
                        (th * qh - tl * ql) / e
                    };
                    total -= cj * term;
                    tl *= lo;
                    th *= hi;
                }
            }
        }
        total
    }

    /// Radial Fourier transform `2 pi int_0^1 k(t) J0(w t) t dt`.
    pub fn hankel(&self, w: f64) -> f64 {
        let n = self.coef.len();
        let (gx, gw) = gauss_legendre_8();
        let mut s = 0.0;
        for i in 0..n {
            let a = i as f64 * self.step;
            for (x, wt) in gx.iter().zip(gw.iter()) {
                let t = a + self.step * 0.5 * (x + 1.0);
                s += wt * 0.5 * self.step * self.eval(t) * libm::j0(w * t) * t;
            }
        }
        2.0 * PI * s
    }

    /// Smallest value of the radial Fourier transform on a frequency grid,
    /// relative to its value at zero.
    pub fn min_spectrum_ratio(&self, w_max: f64, points: usize) -> f64 {
        let h0 = self.hankel(0.0);
        (1..=points)
            .map(|i| self.hankel(w_max * i as f64 / points as f64) / h0)
            .fold(f64::INFINITY, f64::min)
    }
}

fn clamped_spline_moments(y: &[f64], h: f64, s0: f64, s1: f64) -> Vec<f64> {
    let n = y.len();
    let mut a = vec![h / 6.0; n];
    let mut b = vec![2.0 * h / 3.0; n];
    let mut c = vec![h / 6.0; n];
    let mut r = vec![0.0; n];
    b[0] = h / 3.0;
    c[0] = h / 6.0;
    r[0] = (y[1] - y[0]) / h - s0;
    b[n - 1] = h / 3.0;
    a[n - 1] = h / 6.0;
    r[n - 1] = s1 - (y[n - 1] - y[n - 2]) / h;
    for i in 1..n - 1 {
        r[i] = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / h;
    }
    // Thomas algorithm
    for i in 1..n {
        let w = a[i] / b[i - 1];
        b[i] -= w * c[i - 1];
        r[i] -= w * r[i - 1];
    }
    let mut m = vec![0.0; n];
    m[n - 1] = r[n - 1] / b[n - 1];
    for i in (0..n - 1).rev() {
        m[i] = (r[i] - c[i] * m[i + 1]) / b[i];
    }
    m
}

pub(crate) fn gauss_legendre_8() -> ([f64; 8], [f64; 8]) {
    let x = [
        -0.960_289_856_497_536_2,
        -0.796_666_477_413_626_7,
        -0.525_532_409_916_329,
        -0.183_434_642_495_649_8,
        0.183_434_642_495_649_8,
        0.525_532_409_916_329,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_2,
    ];
    let w = [
        0.101_228_536_290_376_3,
        0.222_381_034_453_374_5,
        0.313_706_645_877_887_3,
        0.362_683_783_378_362,
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    (x, w)
}

/// The three field models.
#[derive(Clone, Debug)]
pub enum CovarianceModel {
    /// GFF on the unit square, zero boundary values.
    DirichletSquare { modes: usize },
    /// `log+(R / |x - y|)`.
    ExactScaling { r: f64 },
    /// `int_0^inf k(e^u |x-y| / R) (1 - e^{-delta u}) du`.
    StarScale { kernel: Arc<SeedKernel>, delta: f64, r: f64 },
}

impl CovarianceModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            CovarianceModel::DirichletSquare { modes } if *modes < 1 => invalid("modes must be positive"),
            CovarianceModel::ExactScaling { r } if !(*r > 0.0 && r.is_finite()) => {
                invalid("scale R must be positive")
            }
            CovarianceModel::StarScale { delta, r, .. } if !(*delta > 0.0) || !(*r > 0.0) => {
                invalid("delta and R must be positive")
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CovarianceModel::DirichletSquare { .. } => "dirichlet",
            CovarianceModel::ExactScaling { .. } => "exact",
            CovarianceModel::StarScale { .. } => "starscale",
        }
    }

    pub fn covariance(&self, x: Point, y: Point) -> Result<f64> {
        match self {
            CovarianceModel::DirichletSquare { modes } => green_dirichlet_square(x, y, *modes),
            CovarianceModel::ExactScaling { r } => cov_exact_scaling(x, y, *r),
            CovarianceModel::StarScale { kernel, delta, r } => {
                let d = dist(x, y);
                if d == 0.0 {
                    return Err(Error::Coincident(x[0], x[1]));
                }
                Ok(kernel.band(d / r, 0.0, f64::INFINITY, *delta))
            }
        }
    }

    /// `lim_{y -> x} cov(x, y) + log|x - y|`.
    pub fn log_conformal_radius(&self, x: Point) -> Result<f64> {
        match self {
            CovarianceModel::DirichletSquare { modes } => log_conformal_radius_square(x, *modes),
            CovarianceModel::ExactScaling { r } => Ok(r.ln()),
            CovarianceModel::StarScale { kernel, delta, r } => {
                // cov(d) + log d -> log R - 1/delta - int_0^1 (1 - k(t)) / t dt
                let rho = 1e-300f64;
                let with = kernel.band(rho, 0.0, f64::INFINITY, f64::INFINITY);
                let mut lcr = with + rho.ln() + r.ln();
                if delta.is_finite() {
                    lcr -= 1.0 / delta;
                }
                Ok(lcr)
            }
        }
    }

    /// `cov(x, y) - log CR(x) / 2 - log CR(y) / 2`.
    pub fn primed(&self, x: Point, y: Point) -> Result<f64> {
        match self {
            CovarianceModel::ExactScaling { r } => Ok(cov_exact_scaling(x, y, *r)? - r.ln()),
            _ => Ok(self.covariance(x, y)?
                - 0.5 * self.log_conformal_radius(x)?
                - 0.5 * self.log_conformal_radius(y)?),
        }
    }
}

/// `log+(R / |x - y|)`.
pub fn cov_exact_scaling(x: Point, y: Point, r: f64) -> Result<f64> {
    let d = dist(x, y);
    if d == 0.0 {
        return Err(Error::Coincident(x[0], x[1]));
    }
    Ok((r / d).ln().max(0.0))
}

/// Covariance between the exact-scaling field cut off at scales `s` and `t`:
/// `log+(R / (s v t v d)) + 2 - 2 sqrt(d / (s v t v d))` inside `R`.
pub fn cov_star_scale_cutoff(x: Point, y: Point, s: f64, t: f64, r: f64) -> f64 {
    let d = dist(x, y);
    if d >= r {
        return 0.0;
    }
    let m = s.max(t).max(d);
    if m >= r {
        return 2.0 * (1.0 - (d / r).sqrt());
    }
    (r / m).ln() + 2.0 - 2.0 * (d / m).sqrt()
}

// -log |1 - exp(pi (i theta - c))|, accurate when both arguments are small.
#[inline]
fn lfun(theta: f64, c: f64) -> f64 {
    let e = (-PI * c).exp();
    let a = -(-PI * c).exp_m1();
    let s = (0.5 * PI * theta).sin();
    -0.5 * (a * a + 4.0 * e * s * s).ln()
}

fn check_open_square(p: Point) -> Result<()> {
    if p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(p[0], p[1]))
    }
}

// Sine series over the first axis with the second axis summed exactly.
// The singular part of every term (free space plus the three reflections in
// the second axis) is summed in closed form; what is left decays like
// exp(-2 pi m) and is truncated at `modes` terms.
fn green_parts(d1: f64, s1: f64, a: f64, b: f64, modes: usize, diagonal: bool) -> f64 {
    let d2 = b - a;
    let images = [(d2, 1.0), (a + b, -1.0), (2.0 - a - b, -1.0), (2.0 - d2, 1.0)];
    let mut g = 0.0;
    for (k, &(c, sign)) in images.iter().enumerate() {
        if diagonal && k == 0 {
            g -= PI.ln();
        } else {
            g += sign * lfun(d1, c);
        }
        g -= sign * lfun(s1, c);
    }
    for m in 1..=modes {
        let mf = m as f64;
        let q = (-2.0 * PI * mf).exp();
        if q < 1e-18 {
            break;
        }
        let q = q / (1.0 - q);
        let img: f64 = images.iter().map(|&(c, s)| s * (-PI * mf * c).exp()).sum();
        g += ((PI * mf * d1).cos() - (PI * mf * s1).cos()) / mf * img * q;
    }
    g
}

/// Dirichlet Green function of the unit square, normalised as `-log|x-y| + O(1)`.
pub fn green_dirichlet_square(x: Point, y: Point, modes: usize) -> Result<f64> {
    check_open_square(x)?;
    check_open_square(y)?;
    if x == y {
        return Err(Error::Coincident(x[0], x[1]));
    }
    Ok(green_parts(x[0] - y[0], x[0] + y[0], x[1].min(y[1]), x[1].max(y[1]), modes, false))
}

/// Log conformal radius of the unit square seen from `x`.
pub fn log_conformal_radius_square(x: Point, modes: usize) -> Result<f64> {
    check_open_square(x)?;
    Ok(green_parts(0.0, 2.0 * x[0], x[1], x[1], modes, true))
}

/// `N` positive charges `xs` and `N` negative charges `ys`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeConfig {
    pub xs: Vec<Point>,
    pub ys: Vec<Point>,
}

impl ChargeConfig {
    pub fn new(xs: Vec<Point>, ys: Vec<Point>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::ShapeMismatch(format!("{} positive vs {} negative charges", xs.len(), ys.len())));
        }
        Ok(ChargeConfig { xs, ys })
    }

    pub fn n(&self) -> usize {
        self.xs.len()
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.xs.iter().chain(self.ys.iter()).copied()
    }

    /// Distance from each point to its nearest other point.
    pub fn nearest_distances(&self) -> Vec<f64> {
        let pts: Vec<Point> = self.points().collect();
        (0..pts.len())
            .map(|j| {
                (0..pts.len())
                    .filter(|&i| i != j)
                    .map(|i| dist(pts[i], pts[j]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }
}

/// `-sum_{i<j} C(x_i,x_j) - sum_{i<j} C(y_i,y_j) + sum_{i,j} C(x_i,y_j)`
/// with `C` the covariance, or its primed version when `primed` is set.
pub fn interaction_energy(model: &CovarianceModel, cfg: &ChargeConfig, primed: bool) -> Result<f64> {
    let c = |a: Point, b: Point| if primed { model.primed(a, b) } else { model.covariance(a, b) };
    let n = cfg.n();
    let mut e = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            e -= c(cfg.xs[i], cfg.xs[j])?;
            e -= c(cfg.ys[i], cfg.ys[j])?;
        }
        for j in 0..n {
            e += c(cfg.xs[i], cfg.ys[j])?;
        }
    }
    Ok(e)
}

/// `-1/2 sum_j log(nearest distance of z_j) + C N - E'`.
pub fn onsager_margin(model: &CovarianceModel, cfg: &ChargeConfig, c: f64) -> Result<f64> {
    let e = interaction_energy(model, cfg, true)?;
    let bound: f64 = -0.5 * cfg.nearest_distances().iter().map(|d| d.ln()).sum::<f64>();
    Ok(bound + c * cfg.n() as f64 - e)
}

/// Smallest `C` for which every margin is nonnegative.
pub fn fit_onsager_constant(model: &CovarianceModel, configs: &[ChargeConfig]) -> Result<f64> {
    let mut c = f64::NEG_INFINITY;
    for cfg in configs {
        if cfg.n() == 0 {
            continue;
        }
        let m0 = onsager_margin(model, cfg, 0.0)?;
        c = c.max(-m0 / cfg.n() as f64);
    }
    if c.is_infinite() {
        return Err(Error::InsufficientData("no non-empty configurations".into()));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Jacobi sn/cn/dn for real argument by descending Landen transformation.
    fn sncndn(u: f64, m: f64) -> (f64, f64, f64) {
        let mut a = vec![1.0];
        let mut c = vec![m.sqrt()];
        let mut b = (1.0 - m).sqrt();
        let mut cc = m.sqrt();
        while cc.abs() > 1e-16 {
            let an = *a.last().unwrap();
            let a1 = 0.5 * (an + b);
            cc = 0.5 * (an - b);
            b = (an * b).sqrt();
            a.push(a1);
            c.push(cc);
        }
        let n = a.len() - 1;
        let mut phi = 2f64.powi(n as i32) * a[n] * u;
        for k in (1..=n).rev() {
            phi = 0.5 * (phi + (c[k] / a[k] * phi.sin()).asin());
        }
        let (s, co) = (phi.sin(), phi.cos());
        (s, co, (1.0 - m * s * s).sqrt())
    }

    fn ellip_k(m: f64) -> f64 {
        let (mut a, mut b) = (1.0, (1.0 - m).sqrt());
        for _ in 0..40 {
            let t = 0.5 * (a + b);
            b = (a * b).sqrt();
            a = t;
        }
        PI / (2.0 * a)
    }

    // Green function through the conformal map of the square onto the upper
    // half plane, w = sn(2K (z - 1/2), k) with K'/K = 2.
    fn green_conformal(x: Point, y: Point) -> f64 {
        let k = (2f64.sqrt() - 1.0).powi(2);
        let m = k * k;
        let kk = ellip_k(m);
        let map = |p: Point| {
            let (u, v) = (2.0 * kk * (p[0] - 0.5), ellip_k(1.0 - m) * p[1]);
            let (s, c, d) = sncndn(u, m);
            let (s1, c1, d1) = sncndn(v, 1.0 - m);
            let den = c1 * c1 + m * s * s * s1 * s1;
            (s * d1 / den, c * d * s1 * c1 / den)
        };
        let (a, b) = (map(x), map(y));
        let num = (a.0 - b.0).hypot(a.1 - b.1);
        let den = (a.0 - b.0).hypot(a.1 + b.1);
        -(num / den).ln()
    }

    #[test]
    fn green_matches_conformal_map() {
        let pts = [[0.5, 0.5], [0.2, 0.7], [0.9, 0.1], [0.03, 0.5], [0.51, 0.98], [0.3, 0.3001]];
        for &x in &pts {
            for &y in &pts {
                if x == y {
                    continue;
                }
                let g = green_dirichlet_square(x, y, 64).unwrap();
                assert!((g - green_conformal(x, y)).abs() < 1e-8, "{x:?} {y:?} {g} {}", green_conformal(x, y));
            }
        }
    }

    #[test]
    fn conformal_radius_at_centre() {
        // Schwarz-Christoffel map of the disc onto the square: CR = 4 sqrt(pi) / Gamma(1/4)^2.
        let g14 = 3.625_609_908_221_908_3f64;
        let cr = 4.0 * PI.sqrt() / (g14 * g14);
        assert_relative_eq!(log_conformal_radius_square([0.5, 0.5], 1024).unwrap(), cr.ln(), epsilon = 1e-10);
    }

    #[test]
    fn short_distance_law() {
        for &x in &[[0.5, 0.5], [0.3, 0.6], [0.8, 0.25]] {
            let lcr = log_conformal_radius_square(x, 1024).unwrap();
            let h = 1e-3 / 2f64.sqrt();
            let y1 = [x[0] + h, x[1] + h];
            let y2 = [x[0] - h, x[1] - h];
            let g = 0.5 * (green_dirichlet_square(x, y1, 1024).unwrap() + green_dirichlet_square(x, y2, 1024).unwrap());
            assert!((g + 1e-3f64.ln() - lcr).abs() < 1e-3);
        }
    }

    #[test]
    fn domain_and_coincidence_errors() {
        assert!(matches!(green_dirichlet_square([1.2, 0.5], [0.5, 0.5], 8), Err(Error::Domain(..))));
        assert!(matches!(green_dirichlet_square([0.5, 0.5], [0.5, 0.5], 8), Err(Error::Coincident(..))));
        assert!(matches!(cov_exact_scaling([0.1, 0.1], [0.1, 0.1], 1.0), Err(Error::Coincident(..))));
    }

    #[test]
    fn exact_scaling_values() {
        let c = cov_exact_scaling([0.0, 0.0], [0.1, 0.0], 1.0).unwrap();
        assert_relative_eq!(c, 10f64.ln(), epsilon = 1e-15);
        assert_eq!(cov_exact_scaling([0.0, 0.0], [2.0, 0.0], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn cutoff_variance_and_continuity() {
        let (h, r) = (1e-3, 2.0);
        assert_relative_eq!(cov_star_scale_cutoff([0.0; 2], [0.0; 2], h, h, r), (r / h).ln() + 2.0, epsilon = 1e-12);
        let a = cov_star_scale_cutoff([0.0; 2], [h * (1.0 - 1e-12), 0.0], h, h, r);
        let b = cov_star_scale_cutoff([0.0; 2], [h * (1.0 + 1e-12), 0.0], h, h, r);
        assert!((a - b).abs() < 1e-9);
        let far = cov_star_scale_cutoff([0.0; 2], [0.5, 0.0], h, h, r);
        assert_relative_eq!(far, (r / 0.5f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn cutoff_is_integral_of_compact_kernels() {
        // log+(R/(s v d)) + 2 - 2 sqrt(..) = int_0^{log(R/s)} k(e^u d/R) du + 2 k(d/R), k = (1 - sqrt t)+.
        let k = |t: f64| (1.0 - t.sqrt()).max(0.0);
        let (s, r) = (0.01, 1.0);
        for &d in &[0.0, 0.003, 0.02, 0.4, 0.99] {
            let top = (r / s as f64).ln();
            let n = 200_000;
            let du = top / n as f64;
            let integral: f64 = (0..n).map(|i| k(((i as f64 + 0.5) * du).exp() * d / r) * du).sum();
            let expect = integral + 2.0 * k(d / r);
            assert!((cov_star_scale_cutoff([0.0; 2], [d, 0.0], s, s, r) - expect).abs() < 1e-6, "d={d}");
        }
    }

    #[test]
    fn seed_kernel_band_matches_quadrature() {
        let k = SeedKernel::wendland(512);
        assert_relative_eq!(k.eval(0.0), 1.0, epsilon = 1e-12);
        assert_eq!(k.eval(1.5), 0.0);
        for &(rho, u0, u1, delta) in &[(0.01, 0.0, f64::INFINITY, 0.7), (0.2, 0.5, 1.5, 3.0), (0.05, 0.0, 2.0, f64::INFINITY)] {
            let top = if u1 == f64::INFINITY { (1.0f64 / rho).ln() } else { u1 };
            let n = 400_000;
            let du = (top - u0) / n as f64;
            let q: f64 = (0..n)
                .map(|i| {
                    let u = u0 + (i as f64 + 0.5) * du;
                    let damp = if delta == f64::INFINITY { 1.0 } else { 1.0 - (-delta * u).exp() };
                    k.eval(rho * u.exp()) * damp * du
                })
                .sum();
            assert!((k.band(rho, u0, u1, delta) - q).abs() < 1e-7, "{rho} {u0} {u1} {delta}");
        }
    }

    #[test]
    fn wendland_seed_is_positive_definite() {
        let k = SeedKernel::wendland(1024);
        assert!(k.min_spectrum_ratio(200.0, 400) > -1e-6);
    }

    #[test]
    fn starscale_log_cr_is_diagonal_limit() {
        let m = CovarianceModel::StarScale { kernel: Arc::new(SeedKernel::wendland(512)), delta: 2.0, r: 1.0 };
        let lcr = m.log_conformal_radius([0.0; 2]).unwrap();
        let d = 1e-7;
        let c = m.covariance([0.0; 2], [d, 0.0]).unwrap();
        assert!((c + d.ln() - lcr).abs() < 1e-5);
    }

    #[test]
    fn energy_of_dipole() {
        let m = CovarianceModel::ExactScaling { r: 1.0 };
        let cfg = ChargeConfig::new(vec![[0.0, 0.0]], vec![[0.1, 0.0]]).unwrap();
        assert_relative_eq!(interaction_energy(&m, &cfg, false).unwrap(), 10f64.ln(), epsilon = 1e-14);
        // pure log kernel: the Onsager bound is an equality for a dipole at C = 0
        assert_relative_eq!(onsager_margin(&m, &cfg, 0.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    fn arb_point() -> impl Strategy<Value = Point> {
        (0.01f64..0.99, 0.01f64..0.99).prop_map(|(a, b)| [a, b])
    }

    proptest! {
        #[test]
        fn green_is_symmetric_and_positive(x in arb_point(), y in arb_point()) {
            prop_assume!(dist(x, y) > 1e-6);
            let a = green_dirichlet_square(x, y, 32).unwrap();
            let b = green_dirichlet_square(y, x, 32).unwrap();
            prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
            prop_assert!(a > 0.0);
        }

        #[test]
        fn energy_is_symmetric_under_permutation(
            pts in proptest::collection::vec(arb_point(), 6),
        ) {
            let m = CovarianceModel::ExactScaling { r: 2.0 };
            let cfg = ChargeConfig::new(pts[..3].to_vec(), pts[3..].to_vec()).unwrap();
            let mut perm = cfg.clone();
            perm.xs.reverse();
            perm.ys.rotate_left(1);
            let a = interaction_energy(&m, &cfg, true).unwrap();
            let b = interaction_energy(&m, &perm, true).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
            // swapping the charges leaves the energy unchanged
            let swapped = ChargeConfig::new(cfg.ys.clone(), cfg.xs.clone()).unwrap();
            prop_assert!((a - interaction_energy(&m, &swapped, true).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn cutoff_monotone_in_cutoff(d in 0.0f64..0.5, s in 1e-4f64..0.1) {
            let a = cov_star_scale_cutoff([0.0; 2], [d, 0.0], s, s, 1.0);
            let b = cov_star_scale_cutoff([0.0; 2], [d, 0.0], s / 2.0, s / 2.0, 1.0);
            prop_assert!(b >= a - 1e-12);
        }
    }
}
