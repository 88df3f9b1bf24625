//! Periodic orthonormal wavelet analysis of windowed chaos and the Besov
//! statistic `A_j`.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chaos::ChaosField;
use crate::error::{invalid, Error, Result};

/// Daubechies 12-tap (db6) reconstruction low-pass filter, as tabulated by
/// PyWavelets (`pywt.Wavelet("db6").rec_lo`).
pub const DB6: [f64; 12] = [
    0.11154074335010947,
    0.49462389039845306,
    0.7511339080210954,
    0.31525035170919763,
    -0.22626469396543983,
    -0.12976686756726194,
    0.09750160558732304,
    0.027522865530305727,
    -0.03158203931748603,
    0.0005538422011614961,
    0.004777257510945511,
    -0.0010773010853084796,
];

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletBasis {
    lo: Vec<f64>,
    hi: Vec<f64>,
    pub regularity: u32,
    pub support_radius: f64,
}

impl WaveletBasis {
    pub fn new(filter: &[f64], regularity: u32) -> Result<Self> {
        let l = filter.len();
        if l < 8 || l % 2 != 0 {
            return invalid("filter length must be even and at least 8");
        }
        if regularity < 2 {
            return invalid("regularity must be at least 2");
        }
        let s2: f64 = filter.iter().map(|h| h * h).sum();
        let s1: f64 = filter.iter().sum();
        if (s2 - 1.0).abs() > 1e-12 || (s1 - 2f64.sqrt()).abs() > 1e-12 {
            return invalid(format!("filter is not orthonormal: sum h^2 = {s2}, sum h = {s1}"));
        }
        let hi: Vec<f64> = (0..l).map(|n| if n % 2 == 0 { 1.0 } else { -1.0 } * filter[l - 1 - n]).collect();
        let m0: f64 = hi.iter().sum();
        let m1: f64 = hi.iter().enumerate().map(|(n, g)| n as f64 * g).sum();
        if m0.abs() > 1e-12 || m1.abs() > 1e-10 {
            return invalid("mother wavelet lacks a vanishing moment");
        }
        Ok(WaveletBasis { lo: filter.to_vec(), hi, regularity, support_radius: (l - 1) as f64 / 2.0 })
    }

    pub fn db6() -> Self {
        Self::new(&DB6, 2).expect("db6 filter is orthonormal")
    }

    fn split(&self, x: &[Complex64], a: &mut [Complex64], d: &mut [Complex64]) {
        let n = x.len();
        for k in 0..n / 2 {
            let (mut sa, mut sd) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for (t, (h, g)) in self.lo.iter().zip(&self.hi).enumerate() {
                let v = x[(2 * k + t) % n];
                sa += v * h;
                sd += v * g;
            }
            a[k] = sa;
            d[k] = sd;
        }
    }

    fn merge(&self, a: &[Complex64], d: &[Complex64], x: &mut [Complex64]) {
        let n = 2 * a.len();
        x.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for k in 0..n / 2 {
            for (t, (h, g)) in self.lo.iter().zip(&self.hi).enumerate() {
                x[(2 * k + t) % n] += a[k] * h + d[k] * g;
            }
        }
    }

    // One 2D step: returns (LL, [LH, HL, HH]).
    fn step(&self, c: &Array2<Complex64>) -> (Array2<Complex64>, [Array2<Complex64>; 3]) {
        let n = c.dim().0;
        let m = n / 2;
        let mut rows = Array2::<Complex64>::zeros((n, n));
        let (mut a, mut d) = (vec![Complex64::new(0.0, 0.0); m], vec![Complex64::new(0.0, 0.0); m]);
        for i in 0..n {
            let x: Vec<Complex64> = c.row(i).to_vec();
            self.split(&x, &mut a, &mut d);
            for k in 0..m {
                rows[[i, k]] = a[k];
                rows[[i, m + k]] = d[k];
            }
        }
        let mut out = Array2::<Complex64>::zeros((n, n));
        for j in 0..n {
            let x: Vec<Complex64> = rows.column(j).to_vec();
            self.split(&x, &mut a, &mut d);
            for k in 0..m {
                out[[k, j]] = a[k];
                out[[m + k, j]] = d[k];
            }
        }
        let q = |r0: usize, c0: usize| Array2::from_shape_fn((m, m), |(i, j)| out[[r0 + i, c0 + j]]);
        (q(0, 0), [q(0, m), q(m, 0), q(m, m)])
    }

    fn unstep(&self, ll: &Array2<Complex64>, bands: &[Array2<Complex64>; 3]) -> Array2<Complex64> {
        let m = ll.dim().0;
        let n = 2 * m;
        let mut out = Array2::<Complex64>::zeros((n, n));
        for i in 0..m {
            for j in 0..m {
                out[[i, j]] = ll[[i, j]];
                out[[i, m + j]] = bands[0][[i, j]];
                out[[m + i, j]] = bands[1][[i, j]];
                out[[m + i, m + j]] = bands[2][[i, j]];
            }
        }
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        let mut rows = Array2::<Complex64>::zeros((n, n));
        for j in 0..n {
            let col: Vec<Complex64> = out.column(j).to_vec();
            self.merge(&col[..m], &col[m..], &mut x);
            for i in 0..n {
                rows[[i, j]] = x[i];
            }
        }
        for i in 0..n {
            let row: Vec<Complex64> = rows.row(i).to_vec();
            self.merge(&row[..m], &row[m..], &mut x);
            for j in 0..n {
                rows[[i, j]] = x[j];
            }
        }
        rows
    }
}

/// Detail coefficients for levels `j = 1 ..= L-1` of a `2^L x 2^L` lattice on the
/// unit square, and the level-1 father coefficients.
#[derive(Clone, Debug)]
pub struct WaveletPyramid {
    /// `levels[j - 1]` holds the three sub-bands at level `j`.
    pub levels: Vec<[Array2<Complex64>; 3]>,
    pub father_coeffs: Array2<Complex64>,
    /// Deepest level used by the statistic.
    pub depth: usize,
}

impl WaveletPyramid {
    pub fn level(&self, j: usize) -> &[Array2<Complex64>; 3] {
        &self.levels[j - 1]
    }

    pub fn energy(&self) -> f64 {
        let e = |a: &Array2<Complex64>| a.iter().map(|z| z.norm_sqr()).sum::<f64>();
        e(&self.father_coeffs) + self.levels.iter().flat_map(|b| b.iter()).map(e).sum::<f64>()
    }
}

/// Full periodic transform of lattice values `f` with spacing `h`, starting
/// from `c_L = h f`.
pub fn transform(basis: &WaveletBasis, f: &Array2<Complex64>, h: f64, depth: usize) -> Result<WaveletPyramid> {
    let (n1, n2) = f.dim();
    if n1 != n2 || !n1.is_power_of_two() || n1 < 4 {
        return Err(Error::ShapeMismatch(format!("lattice {n1} x {n2} is not a square power of two")));
    }
    let l = n1.trailing_zeros() as usize;
    let mut c = f.mapv(|v| v * h);
    let mut levels = Vec::with_capacity(l - 1);
    for _ in 1..l {
        let (ll, bands) = basis.step(&c);
        levels.push(bands);
        c = ll;
    }
    levels.reverse();
    Ok(WaveletPyramid { levels, father_coeffs: c, depth: depth.min(l - 1) })
}

/// Inverse of [`transform`], returning lattice values.
pub fn synthesize(basis: &WaveletBasis, pyr: &WaveletPyramid, h: f64) -> Array2<Complex64> {
    let mut c = pyr.father_coeffs.clone();
    for bands in &pyr.levels {
        c = basis.unstep(&c, bands);
    }
    c.mapv(|v| v / h)
}

/// Wavelet coefficients of `u * chaos` up to level `depth`. The chaos lattice
/// must be a `2^L` square; lengths are measured in units of its side.
pub fn analyze(chaos: &ChaosField, window: impl Fn([f64; 2]) -> f64, basis: &WaveletBasis, depth: usize) -> Result<WaveletPyramid> {
    let (n, _) = chaos.dims();
    let side = n as f64 * chaos.spacing;
    let h = 1.0 / n as f64;
    if 0.5f64.powi(depth as i32) < 4.0 * h * (1.0 - 1e-12) {
        return Err(Error::Resolution(format!("level {depth} is finer than four lattice spacings")));
    }
    let f = Array2::from_shape_fn(chaos.dims(), |(i, j)| {
        let p = chaos.node(i, j);
        let u = [(p[0] - chaos.origin[0]) / side, (p[1] - chaos.origin[1]) / side];
        chaos.values[[i, j]] * window(u)
    });
    transform(basis, &f, h, depth)
}

/// Smooth bump on the unit square: 1 on `[1/4, 3/4]^2`, 0 outside `[1/8, 7/8]^2`.
pub fn central_window(u: [f64; 2]) -> f64 {
    bump_window(u, 0.25, 0.375)
}

/// Tensor bump equal to 1 where `|u - 1/2| <= inner` in both axes and 0 where
/// `|u - 1/2| >= outer` in either.
pub fn bump_window(u: [f64; 2], inner: f64, outer: f64) -> f64 {
    fn step(t: f64) -> f64 {
        let g = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
        g(t) / (g(t) + g(1.0 - t))
    }
    let axis = |x: f64| step((outer - (x - 0.5).abs()) / (outer - inner));
    axis(u[0]) * axis(u[1])
}

/// `A_j = 2^{j (1 - 2/p - beta^2/2)} (sum_lambda |alpha(lambda)|^p)^{1/p}`, `j = 1 ..= depth`.
pub fn besov_statistic(pyr: &WaveletPyramid, p: f64, beta: f64) -> Result<Vec<f64>> {
    if pyr.levels.is_empty() || pyr.depth == 0 {
        return Err(Error::InsufficientData("empty pyramid".into()));
    }
    if !(p >= 1.0) {
        return invalid("p must be at least 1");
    }
    let b2 = beta * beta;
    Ok((1..=pyr.depth)
        .map(|j| {
            let coeffs = pyr.level(j).iter().flat_map(|a| a.iter().map(|z| z.norm()));
            let norm = if p.is_infinite() {
                coeffs.fold(0.0, f64::max)
            } else {
                coeffs.map(|a| a.powf(p)).sum::<f64>().powf(1.0 / p)
            };
            let e = if p.is_infinite() { 1.0 - b2 / 2.0 } else { 1.0 - 2.0 / p - b2 / 2.0 };
            2f64.powf(j as f64 * e) * norm
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    BoundedConsistent,
    DivergentConsistent,
    Inconclusive,
}

/// Thresholds on the relative growth of the `l^q` norm of `(A_j)` from depth `J-2` to `J`.
pub const BOUNDED_GROWTH: f64 = 0.10;
pub const DIVERGENT_GROWTH: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub p: f64,
    pub q: f64,
    pub depth: usize,
    pub replicas: usize,
    /// Replica-median `l^q` norm at depths `J-2`, `J-1`, `J`.
    pub norms: [f64; 3],
    pub growth: f64,
    pub bounded_threshold: f64,
    pub divergent_threshold: f64,
    pub verdict: Verdict,
}

fn lq(a: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        a.iter().copied().fold(0.0, f64::max)
    } else {
        a.iter().map(|x| x.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// Verdict from `A_j` series (index `j - 1`), one per replica.
pub fn regularity_verdict(a_series: &[Vec<f64>], p: f64, q: f64) -> Result<VerdictReport> {
    let depth = a_series.iter().map(|a| a.len()).min().unwrap_or(0);
    if a_series.len() < 10 || depth < 6 {
        return Err(Error::InsufficientData(format!(
            "{} replicas at depth {depth}, need 10 replicas and depth 6",
            a_series.len()
        )));
    }
    if !(q >= 1.0) {
        return invalid("q must be at least 1");
    }
    let med = |d: usize| {
        let v: Vec<f64> = a_series.iter().map(|a| lq(&a[..d], q)).collect();
        crate::scaling::median_iqr(&v).0
    };
    let norms = [med(depth - 2), med(depth - 1), med(depth)];
    let growth = norms[2] / norms[0] - 1.0;
    let verdict = if growth < BOUNDED_GROWTH {
        Verdict::BoundedConsistent
    } else if growth > DIVERGENT_GROWTH && norms[1] >= norms[0] && norms[2] >= norms[1] {
        Verdict::DivergentConsistent
    } else {
        Verdict::Inconclusive
    };
    Ok(VerdictReport {
        p,
        q,
        depth,
        replicas: a_series.len(),
        norms,
        growth,
        bounded_threshold: BOUNDED_GROWTH,
        divergent_threshold: DIVERGENT_GROWTH,
        verdict,
    })
}

/// `Var(A_j^p) 2^{-2 j (2 - 2/p - beta^2/2) p}` across replicas for each level.
pub fn variance_decay(a_series: &[Vec<f64>], p: f64, beta: f64) -> Vec<f64> {
    let depth = a_series.iter().map(|a| a.len()).min().unwrap_or(0);
    let b2 = beta * beta;
    (1..=depth)
        .map(|j| {
            let v: Vec<f64> = a_series.iter().map(|a| a[j - 1].powf(p)).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
            var * 2f64.powf(-2.0 * j as f64 * (2.0 - 2.0 / p - b2 / 2.0) * p)
        })
        .collect()
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut k = i;
            while k + 1 < idx.len() && v[idx[k + 1]] == v[idx[i]] {
                k += 1;
            }
            for t in i..=k {
                r[idx[t]] = (i + k) as f64 / 2.0;
            }
            i = k + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Running maximum of `delta^{-2 + beta^2/2} |mu(f_delta)|` for bumps
/// `f_delta(x) = phi((x - c) / delta)` of unit height.
pub fn duality_indicator(chaos: &ChaosField, center: [f64; 2], deltas: &[f64]) -> Result<Vec<f64>> {
    let b2 = chaos.beta * chaos.beta;
    let fp = chaos.footprint();
    let mut out = Vec::with_capacity(deltas.len());
    let mut best = 0.0f64;
    for &d in deltas {
        let q = crate::geom::Rect::square(center, d);
        if (0..2).any(|a| q.lo()[a] < fp.lo()[a] || q.hi()[a] > fp.hi()[a]) {
            return Err(Error::OutOfFootprint(format!("bump of radius {d}")));
        }
        if d < 4.0 * chaos.spacing {
            return Err(Error::Resolution(format!("bump radius {d} below four spacings")));
        }
        let phi = |x: [f64; 2]| {
            let s = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)) / (d * d);
            if s < 1.0 { (1.0 - 1.0 / (1.0 - s)).exp() } else { 0.0 }
        };
        best = best.max(d.powf(-2.0 + b2 / 2.0) * chaos.integrate_test_function(phi).norm());
        out.push(best);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn smooth(n: usize) -> Array2<Complex64> {
        Array2::from_shape_fn((n, n), |(i, j)| {
            let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
            Complex64::new((2.0 * std::f64::consts::PI * x).sin() * (1.0 + y), x * y)
        })
    }

    #[test]
    fn db6_basis_is_valid() {
        let b = WaveletBasis::db6();
        assert_eq!(b.lo.len(), 12);
        let mut bad = DB6;
        bad[0] += 1e-6;
        assert!(WaveletBasis::new(&bad, 2).is_err());
        assert!(WaveletBasis::new(&DB6[..6], 2).is_err());
    }

    #[test]
    fn constants_have_no_detail() {
        let b = WaveletBasis::db6();
        let c = Complex64::new(2.5, -1.0);
        let f = Array2::from_elem((64, 64), c);
        let pyr = transform(&b, &f, 1.0 / 64.0, 5).unwrap();
        for bands in &pyr.levels {
            for a in bands {
                assert!(a.iter().all(|z| z.norm() < 1e-8 * c.norm()));
            }
        }
    }

    #[test]
    fn parseval_and_inversion() {
        let b = WaveletBasis::db6();
        let n = 128;
        let h = 1.0 / n as f64;
        let f = smooth(n);
        let pyr = transform(&b, &f, h, 5).unwrap();
        let direct: f64 = f.iter().map(|z| z.norm_sqr()).sum::<f64>() * h * h;
        assert!((pyr.energy() - direct).abs() < 1e-10 * direct);
        let back = synthesize(&b, &pyr, h);
        let err = back.iter().zip(f.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn single_coefficient_statistic() {
        let b = WaveletBasis::db6();
        let mut pyr = transform(&b, &Array2::zeros((64, 64)), 1.0 / 64.0, 4).unwrap();
        let v = Complex64::new(0.3, -0.4);
        pyr.levels[2][1][[3, 5]] = v;
        for p in [1.0, 2.0, 4.0, f64::INFINITY] {
            let a = besov_statistic(&pyr, p, 1.0).unwrap();
            let e = if p.is_infinite() { 0.5 } else { 1.0 - 2.0 / p - 0.5 };
            assert!((a[2] - 2f64.powf(3.0 * e) * 0.5).abs() < 1e-12);
            assert!(a.iter().enumerate().all(|(j, x)| j == 2 || *x == 0.0));
        }
    }

    #[test]
    fn depth_is_checked() {
        let c = ChaosField::from_values(Array2::from_elem((64, 64), Complex64::new(1.0, 0.0)), [0.0; 2], 1.0 / 64.0, 1.0, 2.0 / 64.0);
        let b = WaveletBasis::db6();
        assert!(matches!(analyze(&c, central_window, &b, 5), Err(Error::Resolution(_))));
        let pyr = analyze(&c, central_window, &b, 4).unwrap();
        assert_eq!(pyr.depth, 4);
    }

    #[test]
    fn synthetic_constant_series_verdicts() {
        let s: Vec<Vec<f64>> = (0..12).map(|_| vec![1.0; 8]).collect();
        assert_eq!(regularity_verdict(&s, 4.0, f64::INFINITY).unwrap().verdict, Verdict::BoundedConsistent);
        assert_eq!(regularity_verdict(&s, 1.0, 1.0).unwrap().verdict, Verdict::DivergentConsistent);
        assert!(regularity_verdict(&s[..5], 1.0, 1.0).is_err());
        let short: Vec<Vec<f64>> = (0..12).map(|_| vec![1.0; 5]).collect();
        assert!(regularity_verdict(&short, 1.0, 1.0).is_err());
    }

    #[test]
    fn window_is_one_in_centre_and_vanishes_outside() {
        assert_eq!(central_window([0.3, 0.7]), 1.0);
        assert_eq!(central_window([0.1, 0.5]), 0.0);
        let m = central_window([0.2, 0.5]);
        assert!(m > 0.0 && m < 1.0);
    }

    #[test]
    fn spearman_of_monotone_sequences() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 25.0, 100.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn statistic_is_homogeneous(c in 0.01f64..100.0, p in prop_oneof![Just(1.0), Just(2.0), Just(4.0), Just(f64::INFINITY)]) {
            let b = WaveletBasis::db6();
            let f = smooth(32);
            let a = besov_statistic(&transform(&b, &f, 1.0 / 32.0, 3).unwrap(), p, 1.0).unwrap();
            let g = f.mapv(|z| z * c);
            let s = besov_statistic(&transform(&b, &g, 1.0 / 32.0, 3).unwrap(), p, 1.0).unwrap();
            for (x, y) in a.iter().zip(&s) {
                prop_assert!((y - c * x).abs() <= 1e-12 * (c * x).abs().max(1e-300));
            }
        }

        #[test]
        fn sup_norm_bounded_by_rearrangement(seed in 0u64..200) {
            use rand::Rng;
            let mut r = crate::rng::stream(seed);
            let f = Array2::from_shape_fn((32, 32), |_| Complex64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5));
            let pyr = transform(&WaveletBasis::db6(), &f, 1.0 / 32.0, 3).unwrap();
            let ai = besov_statistic(&pyr, f64::INFINITY, 1.0).unwrap();
            let a4 = besov_statistic(&pyr, 4.0, 1.0).unwrap();
            for j in 1..=3usize {
                let count = (3 * 4usize.pow(j as u32)) as f64;
                // 2^{j(1-b2/2)} max <= 2^{j(1-b2/2)} l^4 = 2^{j/2} A_j(4)
                prop_assert!(ai[j - 1] <= a4[j - 1] * 2f64.powf(0.5 * j as f64) * (1.0 + 1e-12));
                prop_assert!(a4[j - 1] * 2f64.powf(0.5 * j as f64) <= ai[j - 1] * count.powf(0.25) * (1.0 + 1e-12));
            }
        }
    }
}
