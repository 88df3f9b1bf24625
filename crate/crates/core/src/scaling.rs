//! Pathwise scaling statistics of chaos masses: local exponents, the
//! iterated-logarithm ratio, fast-point counts and an empirical Hölder constant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos::{ChaosField, SquareMass};
use crate::error::{invalid, Error, Result};
use crate::geom::{Point, Rect};
use crate::tail::least_squares;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LadderKind {
    Dyadic(f64),
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiiLadder {
    radii: Vec<f64>,
    kind: LadderKind,
}

impl RadiiLadder {
    /// `r_k = r0 gamma^k` for `k < depth`.
    pub fn dyadic(r0: f64, gamma: f64, depth: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return invalid("gamma must lie in (0, 1)");
        }
        let radii = (0..depth).map(|k| r0 * gamma.powi(k as i32)).collect();
        Self::build(radii, LadderKind::Dyadic(gamma))
    }

    pub fn custom(radii: Vec<f64>) -> Result<Self> {
        Self::build(radii, LadderKind::Custom)
    }

    fn build(radii: Vec<f64>, kind: LadderKind) -> Result<Self> {
        if radii.len() < 4 {
            return Err(Error::InsufficientData(format!("ladder has {} radii, need 4", radii.len())));
        }
        if !radii.iter().all(|r| *r > 0.0 && r.is_finite()) || radii.windows(2).any(|w| w[1] >= w[0]) {
            return invalid("radii must be positive and strictly decreasing");
        }
        Ok(RadiiLadder { radii, kind })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn kind(&self) -> LadderKind {
        self.kind
    }

    pub fn depth(&self) -> usize {
        self.radii.len()
    }

    /// The first `depth` radii.
    pub fn truncate(&self, depth: usize) -> Result<Self> {
        Self::build(self.radii[..depth.min(self.radii.len())].to_vec(), self.kind)
    }
}

/// A mass source that also knows its lattice spacing near a given radius.
pub trait Resolved: SquareMass {
    /// Lattice spacing used for squares of half-side `r`.
    fn spacing_for(&self, r: f64) -> f64;
}

impl Resolved for ChaosField {
    fn spacing_for(&self, _r: f64) -> f64 {
        self.spacing
    }
}

impl Resolved for crate::zoom::ZoomChaos {
    fn spacing_for(&self, r: f64) -> f64 {
        // coarsest level that still contains Q(., r)
        self.levels
            .iter()
            .rev()
            .find(|l| l.footprint().half[0] >= r * (1.0 - 1e-9))
            .unwrap_or(&self.levels[0])
            .spacing
    }
}

fn check_ladder(chaos: &impl Resolved, ladder: &RadiiLadder) -> Result<()> {
    for &r in ladder.radii() {
        let h = chaos.spacing_for(r);
        if r < 4.0 * h * (1.0 - 1e-12) {
            return Err(Error::Resolution(format!("radius {r} below four times the spacing {h}")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub center: Point,
    pub slope: f64,
    /// Root mean square residual of the fit.
    pub residual: f64,
    /// `(r, |mu(Q(x, r))|)`
    pub points: Vec<(f64, f64)>,
}

impl ExponentFit {
    pub const CSV_HEADER: &'static str = "x,y,r,abs_mu,log_ratio";

    /// One row per radius; `log_ratio = log(|mu| / r^{2 - beta^2/2})`.
    pub fn csv_rows(&self, beta: f64) -> Vec<String> {
        let e = 2.0 - beta * beta / 2.0;
        self.points
            .iter()
            .map(|&(r, m)| format!("{},{},{},{},{}", self.center[0], self.center[1], r, m, (m / r.powf(e)).ln()))
            .collect()
    }
}

/// Least-squares slope of `log|mu(Q(x, r))|` against `log r`.
pub fn local_exponent(chaos: &impl Resolved, x: Point, ladder: &RadiiLadder) -> Result<ExponentFit> {
    check_ladder(chaos, ladder)?;
    let mut points = Vec::with_capacity(ladder.depth());
    for &r in ladder.radii() {
        let m = chaos.mass(&Rect::square(x, r))?.norm();
        if !(m > 0.0) {
            return Err(Error::Overflow(format!("vanishing mass at radius {r}")));
        }
        points.push((r, m));
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|&(r, m)| (r.ln(), m.ln())).collect();
    let (slope, icpt) = least_squares(&xy);
    let residual = (xy.iter().map(|(a, b)| (b - icpt - slope * a).powi(2)).sum::<f64>() / xy.len() as f64).sqrt();
    Ok(ExponentFit { center: x, slope, residual, points })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LilSeries {
    pub radii: Vec<f64>,
    pub ratios: Vec<f64>,
    pub running_max: Vec<f64>,
}

/// `|mu(Q(x, r))| / (r^{2 - beta^2/2} (log|log r|)^{beta^2/4})` along the ladder.
pub fn lil_ratio_series(chaos: &impl Resolved, x: Point, ladder: &RadiiLadder) -> Result<LilSeries> {
    check_ladder(chaos, ladder)?;
    if let Some(r) = ladder.radii().iter().find(|r| **r >= (-1.0f64).exp()) {
        return invalid(format!("radius {r} is not below 1/e"));
    }
    let b2 = chaos.beta().powi(2);
    let mut ratios = Vec::with_capacity(ladder.depth());
    for &r in ladder.radii() {
        let m = chaos.mass(&Rect::square(x, r))?.norm();
        ratios.push(m / (r.powf(2.0 - b2 / 2.0) * (-r.ln()).ln().powf(b2 / 4.0)));
    }
    let running_max = ratios
        .iter()
        .scan(0.0f64, |acc, &v| {
            *acc = acc.max(v);
            Some(*acc)
        })
        .collect();
    Ok(LilSeries { radii: ladder.radii().to_vec(), ratios, running_max })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FastPointReport {
    pub n: u32,
    pub a: f64,
    pub count: u64,
    /// Points per axis of the scanned grid.
    pub grid_size: u64,
    /// `Var / mean` of counts over a 4 x 4 block partition of the grid.
    pub variance_diag: f64,
}

impl FastPointReport {
    pub const CSV_HEADER: &'static str = "n,a,count,variance_diag";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.n, self.a, self.count, self.variance_diag)
    }
}

/// Count points `x` of `2^{-n} Z^2` with `|mu(Q(x, rho))| >= a rho^{2 - beta^2/2} |log rho|^{beta^2/4}`,
/// where `rho = 2^{-n(1 - delta)}`, over the largest square grid whose squares
/// fit in the footprint.
pub fn fast_point_scan(chaos: &ChaosField, a: f64, n: u32, delta: f64) -> Result<FastPointReport> {
    if !(delta > 0.0 && delta < 0.5) {
        return invalid("delta must lie in (0, 1/2)");
    }
    if !(a >= 0.0) {
        return invalid("threshold a must be nonnegative");
    }
    let rn = 0.5f64.powi(n as i32);
    let rho = rn.powf(1.0 - delta);
    if rho < 8.0 * chaos.spacing {
        return Err(Error::Resolution(format!("radius {rho} below eight times the spacing {}", chaos.spacing)));
    }
    let b2 = chaos.beta.powi(2);
    let thr = a * rho.powf(2.0 - b2 / 2.0) * (-rho.ln()).powf(b2 / 4.0);
    let fp = chaos.footprint();
    let (lo, hi) = (fp.lo(), fp.hi());
    let idx = |axis: usize| {
        let first = ((lo[axis] + rho) / rn - 1e-9).ceil() as i64;
        let last = ((hi[axis] - rho) / rn + 1e-9).floor() as i64;
        (first, last - first + 1)
    };
    let ((i0, ni), (j0, nj)) = (idx(0), idx(1));
    let g = ni.min(nj);
    if g < 1 {
        return Err(Error::Resolution(format!("no grid point at level {n} fits in the footprint")));
    }
    let g = g as usize;
    let hits: Vec<Vec<bool>> = (0..g)
        .into_par_iter()
        .map(|i| {
            (0..g)
                .map(|j| {
                    let x = [(i0 + i as i64) as f64 * rn, (j0 + j as i64) as f64 * rn];
                    chaos.integrate_square(x, rho).map(|m| m.norm() >= thr)
                })
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<_>>()?;
    let count = hits.iter().flatten().filter(|h| **h).count() as u64;
    let variance_diag = if g >= 4 {
        let mut blocks = [0.0f64; 16];
        for (i, row) in hits.iter().enumerate() {
            for (j, h) in row.iter().enumerate() {
                if *h {
                    blocks[(4 * i / g) * 4 + 4 * j / g] += 1.0;
                }
            }
        }
        let mean = blocks.iter().sum::<f64>() / 16.0;
        let var = blocks.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / 15.0;
        if mean > 0.0 { var / mean } else { f64::NAN }
    } else {
        f64::NAN
    };
    Ok(FastPointReport { n, a, count, grid_size: g as u64, variance_diag })
}

/// Least-squares slope of `log2 count` against `n` over levels with nonzero counts.
pub fn boxcount_dimension(reports: &[FastPointReport]) -> Result<f64> {
    let pts: Vec<(f64, f64)> =
        reports.iter().filter(|r| r.count > 0).map(|r| (r.n as f64, (r.count as f64).log2())).collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!("{} levels with nonzero counts, need 3", pts.len())));
    }
    Ok(least_squares(&pts).0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub alpha: f64,
    pub constant: f64,
    pub used: usize,
    /// Pairs with identical `(x, r)`.
    pub excluded: usize,
}

/// `max |mu(Q) - mu(Q')| / ((r v r')^alpha |(x, r) - (x', r')|^alpha)` over the pairs.
pub fn holder_modulus(chaos: &impl SquareMass, pairs: &[(Rect, Rect)], alpha: f64) -> Result<HolderFit> {
    let b2 = chaos.beta().powi(2);
    if !(alpha > 0.0 && alpha < 1.0 - b2 / 4.0) {
        return invalid(format!("alpha must lie in (0, {})", 1.0 - b2 / 4.0));
    }
    let (mut constant, mut used, mut excluded) = (0.0f64, 0, 0);
    for (q, p) in pairs {
        if q.half[0] != q.half[1] || p.half[0] != p.half[1] {
            return invalid("holder pairs must be squares");
        }
        let d = ((q.center[0] - p.center[0]).powi(2)
            + (q.center[1] - p.center[1]).powi(2)
            + (q.half[0] - p.half[0]).powi(2))
        .sqrt();
        if d == 0.0 {
            excluded += 1;
            continue;
        }
        let diff = (chaos.mass(q)? - chaos.mass(p)?).norm();
        constant = constant.max(diff / (q.half[0].max(p.half[0]).powf(alpha) * d.powf(alpha)));
        used += 1;
    }
    Ok(HolderFit { alpha, constant, used, excluded })
}

/// Median and interquartile range.
pub fn median_iqr(xs: &[f64]) -> (f64, f64) {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let t = p * (v.len() - 1) as f64;
        let (i, f) = (t.floor() as usize, t.fract());
        if i + 1 < v.len() { v[i] * (1.0 - f) + v[i + 1] * f } else { v[i] }
    };
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    (q(0.5), q(0.75) - q(0.25))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use num_complex::Complex64;
    use proptest::prelude::*;

    // Unit-modulus field: mu(Q) = area, i.e. beta -> 0.
    fn flat(n: usize) -> ChaosField {
        let v = Array2::from_elem((n, n), Complex64::new(1.0, 0.0));
        ChaosField::from_values(v, [0.0, 0.0], 1.0 / n as f64, 1e-9, 2.0 / n as f64)
    }

    #[test]
    fn ladder_invariants() {
        assert!(RadiiLadder::custom(vec![0.4, 0.2, 0.1]).is_err());
        assert!(RadiiLadder::custom(vec![0.4, 0.2, 0.2, 0.1]).is_err());
        let l = RadiiLadder::dyadic(0.25, 0.5, 6).unwrap();
        assert_eq!(l.depth(), 6);
        assert_eq!(l.kind(), LadderKind::Dyadic(0.5));
        assert!(matches!(local_exponent(&flat(64), [0.5, 0.5], &l), Err(Error::Resolution(_))));
    }

    #[test]
    fn area_scaling_gives_slope_two() {
        let c = flat(1024);
        let l = RadiiLadder::dyadic(0.25, 0.5, 6).unwrap();
        let fit = local_exponent(&c, [0.5, 0.5], &l).unwrap();
        assert!((fit.slope - 2.0).abs() < 0.02, "{}", fit.slope);
        let off = local_exponent(&c, [0.5 + 0.3 / 1024.0, 0.5], &l).unwrap();
        assert!((off.slope - 2.0).abs() < 0.02);
    }

    #[test]
    fn lil_running_max_is_monotone() {
        let c = flat(1024);
        let l = RadiiLadder::dyadic(0.25, 0.5, 6).unwrap();
        let s = lil_ratio_series(&c, [0.5, 0.5], &l).unwrap();
        assert!(s.ratios.iter().all(|r| *r > 0.0 && r.is_finite()));
        assert!(s.running_max.windows(2).all(|w| w[1] >= w[0]));
        let big = RadiiLadder::custom(vec![0.45, 0.3, 0.2, 0.1]).unwrap();
        assert!(lil_ratio_series(&c, [0.5, 0.5], &big).is_err());
    }

    #[test]
    fn fast_points_saturate_and_vanish() {
        let c = flat(512);
        let all = fast_point_scan(&c, 0.0, 4, 0.1).unwrap();
        assert_eq!(all.count, all.grid_size * all.grid_size);
        let none = fast_point_scan(&c, 1e6, 4, 0.1).unwrap();
        assert_eq!(none.count, 0);
        assert!(matches!(fast_point_scan(&c, 1.0, 9, 0.1), Err(Error::Resolution(_))));
        assert!(fast_point_scan(&c, 1.0, 4, 0.6).is_err());
    }

    fn rep(n: u32, count: u64) -> FastPointReport {
        FastPointReport { n, a: 1.0, count, grid_size: 1 << n, variance_diag: 0.0 }
    }

    #[test]
    fn boxcount_examples() {
        let full: Vec<_> = (3..8).map(|n| rep(n, 1u64 << (2 * n))).collect();
        assert!((boxcount_dimension(&full).unwrap() - 2.0).abs() < 1e-12);
        let ones: Vec<_> = (3..8).map(|n| rep(n, 1)).collect();
        assert!(boxcount_dimension(&ones).unwrap().abs() < 1e-12);
        let synth: Vec<_> = (2..10).map(|n| rep(n, 2f64.powf(1.5 * n as f64).round() as u64)).collect();
        let exact: Vec<(f64, f64)> = (2..10).map(|n| (n as f64, 1.5 * n as f64)).collect();
        assert!((least_squares(&exact).0 - 1.5).abs() < 1e-9);
        assert!((boxcount_dimension(&synth).unwrap() - 1.5).abs() < 0.01);
        let few = vec![rep(3, 4), rep(4, 0), rep(5, 9)];
        assert!(matches!(boxcount_dimension(&few), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn holder_excludes_identical_pairs() {
        let c = flat(256);
        let q = Rect::square([0.5, 0.5], 0.1);
        let fit = holder_modulus(&c, &[(q, q), (q, Rect::square([0.52, 0.5], 0.1))], 0.5).unwrap();
        assert_eq!((fit.used, fit.excluded), (1, 1));
        assert!(holder_modulus(&c, &[(q, q)], 1.0).is_err());
    }

    #[test]
    fn median_iqr_of_uniform_grid() {
        let xs: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        assert_eq!(median_iqr(&xs), (50.0, 50.0));
    }

    proptest! {
        #[test]
        fn holder_constant_monotone_under_inclusion(seed in 0u64..1000, k in 1usize..20) {
            use rand::Rng;
            let t = crate::field::TorusSampler::exact_scaling(64, 1.0 / 64.0, 2.0).unwrap();
            let p = crate::chaos::ChaosParams::new(1.0, 2.0 / 64.0, crate::chaos::Normalization::Wick).unwrap();
            let c = crate::chaos::build_chaos(&t.realization(seed), &p, 0).unwrap();
            let mut r = crate::rng::stream(seed);
            let mut sq = || Rect::square([r.random_range(0.3..0.7), r.random_range(0.3..0.7)], r.random_range(0.1..0.25));
            let pairs: Vec<(Rect, Rect)> = (0..20).map(|_| (sq(), sq())).collect();
            let a = holder_modulus(&c, &pairs[..k], 0.6).unwrap().constant;
            let b = holder_modulus(&c, &pairs, 0.6).unwrap().constant;
            prop_assert!(b >= a);
        }

        #[test]
        fn fast_counts_nonincreasing_in_a(a in 0.0f64..3.0, da in 0.0f64..2.0, seed in 0u64..100) {
            let t = crate::field::TorusSampler::exact_scaling(128, 1.0 / 128.0, 2.0).unwrap();
            let p = crate::chaos::ChaosParams::new(1.0, 2.0 / 128.0, crate::chaos::Normalization::Conformal).unwrap();
            let c = crate::chaos::build_chaos(&t.realization(seed), &p, 0).unwrap();
            let lo = fast_point_scan(&c, a, 4, 0.1).unwrap();
            let hi = fast_point_scan(&c, a + da, 4, 0.1).unwrap();
            prop_assert!(hi.count <= lo.count);
        }
    }
}
