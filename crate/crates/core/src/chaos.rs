//! The regularized imaginary chaos `e^{i beta Gamma_eps}` on a lattice.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{GaussianField, RegularizedField};
use crate::geom::{Point, Rect};

/// How the phase `e^{i beta Gamma_eps}` is scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// `eps^{-beta^2/2}`
    PowerLaw,
    /// `e^{beta^2 Var(Gamma_eps(x)) / 2}`
    Wick,
    /// `e^{beta^2 (Var(Gamma_eps(x)) - log CR(x)) / 2}`: Wick ordering times
    /// `CR^{-beta^2/2}`, so that the two-point function is `e^{beta^2 G'}`.
    Conformal,
}

impl std::str::FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "powerlaw" => Ok(Normalization::PowerLaw),
            "wick" => Ok(Normalization::Wick),
            "conformal" => Ok(Normalization::Conformal),
            _ => invalid(format!("unknown normalization '{s}'")),
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Normalization::PowerLaw => "powerlaw",
            Normalization::Wick => "wick",
            Normalization::Conformal => "conformal",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosParams {
    pub beta: f64,
    pub eps: f64,
    pub normalization: Normalization,
}

impl ChaosParams {
    pub fn new(beta: f64, eps: f64, normalization: Normalization) -> Result<Self> {
        let p = ChaosParams { beta, eps, normalization };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta * self.beta < 2.0) {
            return invalid(format!("beta must lie in (0, sqrt 2), got {}", self.beta));
        }
        if !(self.eps > 0.0) {
            return invalid("eps must be positive");
        }
        Ok(())
    }
}

/// Anything that can report the chaos mass of an axis-parallel rectangle.
pub trait SquareMass {
    fn mass(&self, q: &Rect) -> Result<Complex64>;
    fn beta(&self) -> f64;
}

/// Chaos values on the nodes of a lattice, with a summed-area table for
/// rectangle masses.
#[derive(Clone, Debug)]
pub struct ChaosField {
    pub values: Array2<Complex64>,
    pub origin: Point,
    pub spacing: f64,
    pub beta: f64,
    pub eps: f64,
    /// `prefix[[i, j]] = h^2 sum_{a < i, b < j} values[[a, b]]`
    prefix: Array2<Complex64>,
}

pub fn build_chaos(field: &impl GaussianField, params: &ChaosParams, grid: usize) -> Result<ChaosField> {
    params.validate()?;
    let reg = field.regularize(params.eps, grid)?;
    chaos_from_regularized(&reg, params)
}

pub fn chaos_from_regularized(reg: &RegularizedField, params: &ChaosParams) -> Result<ChaosField> {
    params.validate()?;
    let h = reg.field.spacing;
    if params.eps < 2.0 * h * (1.0 - 1e-12) {
        return Err(Error::Resolution(format!("eps = {} is below twice the spacing {h}", params.eps)));
    }
    let b = params.beta;
    let b2 = b * b;
    let (n1, n2) = reg.field.values.dim();
    let mut values = Array2::<Complex64>::zeros((n1, n2));
    for ((i, j), v) in values.indexed_iter_mut() {
        let scale = match params.normalization {
            Normalization::PowerLaw => params.eps.powf(-b2 / 2.0),
            Normalization::Wick => (0.5 * b2 * reg.variance[[i, j]]).exp(),
            Normalization::Conformal => (0.5 * b2 * (reg.variance[[i, j]] - reg.log_cr[[i, j]])).exp(),
        };
        if !scale.is_finite() {
            return Err(Error::Overflow(format!("normalization at node ({i}, {j})")));
        }
        *v = Complex64::from_polar(scale, b * reg.field.values[[i, j]]);
    }
    Ok(ChaosField::from_values(values, reg.field.origin, h, b, params.eps))
}

impl ChaosField {
    pub fn from_values(values: Array2<Complex64>, origin: Point, spacing: f64, beta: f64, eps: f64) -> Self {
        let (n1, n2) = values.dim();
        let w = spacing * spacing;
        let mut prefix = Array2::<Complex64>::zeros((n1 + 1, n2 + 1));
        for i in 0..n1 {
            let mut row = Complex64::new(0.0, 0.0);
            for j in 0..n2 {
                row += values[[i, j]] * w;
                prefix[[i + 1, j + 1]] = prefix[[i, j + 1]] + row;
            }
        }
        ChaosField { values, origin, spacing, beta, eps, prefix }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Point {
        [
            self.origin[0] + (i as f64 + 0.5) * self.spacing,
            self.origin[1] + (j as f64 + 0.5) * self.spacing,
        ]
    }

    /// Rectangle covered by the lattice cells.
    pub fn footprint(&self) -> Rect {
        let (n1, n2) = self.dims();
        let half = [0.5 * n1 as f64 * self.spacing, 0.5 * n2 as f64 * self.spacing];
        Rect::new([self.origin[0] + half[0], self.origin[1] + half[1]], half)
    }

    // Index range of node centres c with lo <= c < hi along one axis.
    fn range(&self, lo: f64, hi: f64, axis: usize, n: usize) -> Result<(usize, usize)> {
        let h = self.spacing;
        let o = self.origin[axis];
        let tol = 1e-9;
        if lo < o - tol * h || hi > o + n as f64 * h + tol * h {
            return Err(Error::OutOfFootprint(format!("[{lo}, {hi}] on axis {axis}")));
        }
        let a = ((lo - o) / h - 0.5 - tol).ceil().max(0.0) as usize;
        let b = ((hi - o) / h - 0.5 - tol).ceil().max(0.0) as usize;
        Ok((a.min(n), b.min(n)))
    }

    /// Integral over the rectangle by the midpoint rule: nodes whose centre
    /// lies in `[lo, hi)` in each axis, weighted by `h^2`.
    pub fn integrate_rect(&self, q: &Rect) -> Result<Complex64> {
        let (n1, n2) = self.dims();
        let (lo, hi) = (q.lo(), q.hi());
        let (a0, a1) = self.range(lo[0], hi[0], 0, n1)?;
        let (b0, b1) = self.range(lo[1], hi[1], 1, n2)?;
        if a1 <= a0 || b1 <= b0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let p = &self.prefix;
        Ok(p[[a1, b1]] - p[[a0, b1]] - p[[a1, b0]] + p[[a0, b0]])
    }

    pub fn integrate_square(&self, center: Point, half_side: f64) -> Result<Complex64> {
        self.integrate_rect(&Rect::square(center, half_side))
    }

    /// `h^2 sum f(node) chaos(node)`.
    pub fn integrate_test_function(&self, f: impl Fn(Point) -> f64) -> Complex64 {
        let w = self.spacing * self.spacing;
        let mut s = Complex64::new(0.0, 0.0);
        for ((i, j), v) in self.values.indexed_iter() {
            let fv = f(self.node(i, j));
            if fv != 0.0 {
                s += v * (fv * w);
            }
        }
        s
    }
}

impl SquareMass for ChaosField {
    fn mass(&self, q: &Rect) -> Result<Complex64> {
        self.integrate_rect(q)
    }

    fn beta(&self) -> f64 {
        self.beta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{sample_gff_square, TorusSampler};
    use proptest::prelude::*;

    fn small_chaos(norm: Normalization) -> ChaosField {
        let t = TorusSampler::exact_scaling(64, 1.0 / 64.0, 2.0).unwrap();
        let p = ChaosParams::new(1.0, 2.0 / 64.0, norm).unwrap();
        build_chaos(&t.realization(3), &p, 0).unwrap()
    }

    #[test]
    fn powerlaw_modulus_is_exact() {
        let c = small_chaos(Normalization::PowerLaw);
        let want = (2.0f64 / 64.0).powf(-0.5);
        assert!(c.values.iter().all(|z| (z.norm() - want).abs() < 1e-12 * want));
    }

    #[test]
    fn conformal_and_wick_differ_by_cr() {
        let a = small_chaos(Normalization::Wick);
        let b = small_chaos(Normalization::Conformal);
        let ratio = a.values[[3, 3]].norm() / b.values[[3, 3]].norm();
        assert!((ratio - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ChaosParams::new(1.5, 0.1, Normalization::Wick).is_err());
        assert!(ChaosParams::new(1.0, 0.0, Normalization::Wick).is_err());
        let t = TorusSampler::exact_scaling(32, 1.0 / 32.0, 2.0).unwrap();
        let p = ChaosParams::new(1.0, 1.0 / 32.0, Normalization::Wick).unwrap();
        assert!(matches!(build_chaos(&t.realization(0), &p, 0), Err(Error::Resolution(_))));
        let c = small_chaos(Normalization::Wick);
        assert!(matches!(c.integrate_square([0.9, 0.9], 0.2), Err(Error::OutOfFootprint(_))));
    }

    #[test]
    fn spectral_chaos_footprint_avoids_boundary() {
        let f = sample_gff_square(32, 1).unwrap();
        let p = ChaosParams::new(1.0, 0.05, Normalization::Conformal).unwrap();
        let c = build_chaos(&f, &p, 64).unwrap();
        let n = c.dims().0;
        assert!(c.node(0, 0)[0] > 0.05 && c.node(n - 1, n - 1)[1] < 0.95);
    }

    #[test]
    fn whole_footprint_integral_matches_direct_sum() {
        let c = small_chaos(Normalization::Conformal);
        let total = c.integrate_rect(&c.footprint()).unwrap();
        let direct: Complex64 = c.values.iter().sum::<Complex64>() * c.spacing * c.spacing;
        assert!((total - direct).norm() < 1e-12 * direct.norm().max(1.0));
        let via_f = c.integrate_test_function(|_| 1.0);
        assert!((total - via_f).norm() < 1e-10);
    }

    proptest! {
        #[test]
        fn integrals_are_additive(x0 in 0.05f64..0.4, y0 in 0.05f64..0.4, w in 0.05f64..0.3, split in 0.1f64..0.9, ht in 0.05f64..0.3) {
            let c = small_chaos(Normalization::Conformal);
            let xm = x0 + split * w;
            let whole = Rect::new([x0 + w / 2.0, y0 + ht / 2.0], [w / 2.0, ht / 2.0]);
            let left = Rect::new([(x0 + xm) / 2.0, y0 + ht / 2.0], [(xm - x0) / 2.0, ht / 2.0]);
            let right = Rect::new([(xm + x0 + w) / 2.0, y0 + ht / 2.0], [(x0 + w - xm) / 2.0, ht / 2.0]);
            let a = c.integrate_rect(&whole).unwrap();
            let b = c.integrate_rect(&left).unwrap() + c.integrate_rect(&right).unwrap();
            prop_assert!((a - b).norm() < 1e-10);
        }
    }
}
