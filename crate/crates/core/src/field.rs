//! Samplers for the Gaussian fields: sine-series GFF on the unit square,
//! circulant-embedded stationary fields on a lattice, and the Markov split of
//! the GFF on a sub-square.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use ndarray::{s, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::covariance::{cov_star_scale_cutoff, log_conformal_radius_square};
use crate::error::{invalid, Error, Result};
use crate::fft::Fft2;
use crate::geom::Point;
use crate::rng;

/// Values on a square lattice; node `(i, j)` sits at
/// `origin + ((i + 1/2) h, (j + 1/2) h)`, the centre of its cell.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeField {
    pub values: Array2<f64>,
    pub origin: Point,
    pub spacing: f64,
    pub periodic: bool,
}

impl LatticeField {
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Point {
        [
            self.origin[0] + (i as f64 + 0.5) * self.spacing,
            self.origin[1] + (j as f64 + 0.5) * self.spacing,
        ]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// A circle-averaged field on a lattice together with its pointwise variance
/// and the log conformal radius of the domain at each node.
#[derive(Clone, Debug)]
pub struct RegularizedField {
    pub field: LatticeField,
    pub eps: f64,
    pub variance: Array2<f64>,
    pub log_cr: Array2<f64>,
}

/// Anything that can produce its `eps`-circle average on a lattice.
pub trait GaussianField {
    /// `grid` is the number of cells per unit length where the sampler lets
    /// the caller choose it; lattice samplers ignore it.
    fn regularize(&self, eps: f64, grid: usize) -> Result<RegularizedField>;
}

fn normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

// ---------------------------------------------------------------------------
// Sine series

/// `Gamma(x) = sqrt(2 pi) sum_{m,n <= modes} g_mn phi_mn(x) / sqrt(lambda_mn)`
/// with `phi_mn = 2 sin(m pi x1) sin(n pi x2)`, `lambda_mn = pi^2 (m^2 + n^2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub modes: usize,
    /// `coeffs[[m-1, n-1]] = g_mn`.
    pub coeffs: Array2<f64>,
}

#[inline]
fn lambda(m: usize, n: usize) -> f64 {
    PI * PI * ((m * m + n * n) as f64)
}

/// Weight of `g_mn sin(m pi x1) sin(n pi x2)` in the `eps`-circle average.
#[inline]
fn amplitude(m: usize, n: usize, eps: f64) -> f64 {
    let l = lambda(m, n);
    let j = if eps > 0.0 { libm::j0(eps * l.sqrt()) } else { 1.0 };
    (2.0 * PI).sqrt() * 2.0 * j / l.sqrt()
}

pub fn sample_gff_square(modes: usize, seed: u64) -> Result<SpectralField> {
    if modes == 0 {
        return invalid("modes must be positive");
    }
    let mut r = rng::stream(seed);
    let g = normals(&mut r, modes * modes);
    Ok(SpectralField { modes, coeffs: Array2::from_shape_vec((modes, modes), g).unwrap() })
}

#[derive(Clone, Copy)]
enum Trig {
    /// `sin(m pi (i + 1/2) / G)`
    Sine,
    /// `2 sin^2(m pi (i + 1/2) / G) = 1 - cos(2 m pi (i + 1/2) / G)`
    SineSquared,
}

// out_i = sum_{m=1}^{M} a_m T_m(i), i < g, evaluated with one complex FFT.
fn trig_sum(a: &[f64], g: usize, kind: Trig, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    match kind {
        Trig::Sine => {
            let len = 2 * g;
            let mut b = vec![Complex64::new(0.0, 0.0); len];
            for (k, &am) in a.iter().enumerate() {
                let m = k + 1;
                b[m % len] += am * Complex64::from_polar(1.0, PI * m as f64 / len as f64);
            }
            planner.plan_fft_inverse(len).process(&mut b);
            b[..g].iter().map(|z| z.im).collect()
        }
        Trig::SineSquared => {
            let mut b = vec![Complex64::new(0.0, 0.0); g];
            let total: f64 = a.iter().sum();
            for (k, &am) in a.iter().enumerate() {
                let m = k + 1;
                b[m % g] += am * Complex64::from_polar(1.0, PI * m as f64 / g as f64);
            }
            planner.plan_fft_inverse(g).process(&mut b);
            b.iter().map(|z| total - z.re).collect()
        }
    }
}

// out[i][j] = sum_{m,n} c[m-1][n-1] T_m(i) T_n(j)
fn separable(c: &Array2<f64>, g: usize, kind: Trig) -> Array2<f64> {
    let mut planner = FftPlanner::new();
    let (mm, nn) = c.dim();
    let mut t = Array2::<f64>::zeros((mm, g));
    for m in 0..mm {
        let row: Vec<f64> = c.row(m).to_vec();
        let out = trig_sum(&row[..nn], g, kind, &mut planner);
        t.row_mut(m).assign(&ndarray::ArrayView1::from(&out));
    }
    let mut f = Array2::<f64>::zeros((g, g));
    for j in 0..g {
        let col: Vec<f64> = t.column(j).to_vec();
        let out = trig_sum(&col, g, kind, &mut planner);
        f.column_mut(j).assign(&ndarray::ArrayView1::from(&out));
    }
    f
}

impl SpectralField {
    fn scaled(&self, eps: f64) -> Array2<f64> {
        Array2::from_shape_fn((self.modes, self.modes), |(a, b)| self.coeffs[[a, b]] * amplitude(a + 1, b + 1, eps))
    }

    fn point_sum(&self, x: Point, eps: f64) -> f64 {
        let s1: Vec<f64> = (1..=self.modes).map(|m| (m as f64 * PI * x[0]).sin()).collect();
        let s2: Vec<f64> = (1..=self.modes).map(|n| (n as f64 * PI * x[1]).sin()).collect();
        let mut v = 0.0;
        for m in 0..self.modes {
            let mut inner = 0.0;
            for n in 0..self.modes {
                inner += self.coeffs[[m, n]] * amplitude(m + 1, n + 1, eps) * s2[n];
            }
            v += s1[m] * inner;
        }
        v
    }

    /// Value of the truncated series at `x`.
    pub fn value_at(&self, x: Point) -> f64 {
        self.point_sum(x, 0.0)
    }

    /// Average over the circle of radius `eps` around `x`.
    pub fn circle_average(&self, x: Point, eps: f64) -> Result<f64> {
        check_disc_inside(x, eps)?;
        Ok(self.point_sum(x, eps))
    }

    /// `E[Gamma_eps(x)^2]` for the truncated series.
    pub fn circle_average_variance(modes: usize, x: Point, eps: f64) -> f64 {
        let mut v = 0.0;
        for m in 1..=modes {
            let sm = (m as f64 * PI * x[0]).sin();
            for n in 1..=modes {
                let sn = (n as f64 * PI * x[1]).sin();
                let a = amplitude(m, n, eps) * sm * sn;
                v += a * a;
            }
        }
        v
    }

    /// Circle averages at the `g x g` cell centres of the unit square.
    pub fn grid_values(&self, g: usize, eps: f64) -> Array2<f64> {
        separable(&self.scaled(eps), g, Trig::Sine)
    }

    /// Pointwise variance of [`SpectralField::grid_values`].
    pub fn grid_variance(modes: usize, g: usize, eps: f64) -> Array2<f64> {
        let w = Array2::from_shape_fn((modes, modes), |(a, b)| {
            let amp = amplitude(a + 1, b + 1, eps);
            amp * amp / 4.0
        });
        separable(&w, g, Trig::SineSquared)
    }

    /// `int_{[0,1]^2} Gamma^2 = sum 2 pi g^2 / lambda`.
    pub fn l2_norm_squared(&self) -> f64 {
        let mut s = 0.0;
        for m in 1..=self.modes {
            for n in 1..=self.modes {
                let g = self.coeffs[[m - 1, n - 1]];
                s += 2.0 * PI * g * g / lambda(m, n);
            }
        }
        s
    }
}

fn check_disc_inside(x: Point, eps: f64) -> Result<()> {
    if x[0] - eps <= 0.0 || x[0] + eps >= 1.0 || x[1] - eps <= 0.0 || x[1] + eps >= 1.0 {
        return Err(Error::Domain(x[0], x[1]));
    }
    Ok(())
}

impl GaussianField for SpectralField {
    fn regularize(&self, eps: f64, grid: usize) -> Result<RegularizedField> {
        if !(eps > 0.0) {
            return invalid("eps must be positive");
        }
        if grid < 2 {
            return invalid("grid must have at least two cells");
        }
        let h = 1.0 / grid as f64;
        // keep nodes whose eps-disc stays inside the square
        let i0 = (0..grid).find(|&i| (i as f64 + 0.5) * h - eps > 0.0).unwrap_or(grid);
        if 2 * i0 >= grid {
            return Err(Error::Resolution(format!("eps = {eps} leaves no interior nodes")));
        }
        let all = self.grid_values(grid, eps);
        let var = SpectralField::grid_variance(self.modes, grid, eps);
        let r = i0..grid - i0;
        let values = all.slice(s![r.clone(), r.clone()]).to_owned();
        let variance = var.slice(s![r.clone(), r.clone()]).to_owned();
        let origin = [i0 as f64 * h, i0 as f64 * h];
        let field = LatticeField { values, origin, spacing: h, periodic: false };
        let k = grid - 2 * i0;
        let mut log_cr = Array2::zeros((k, k));
        for i in 0..k {
            for j in 0..k {
                log_cr[[i, j]] = log_conformal_radius_square(field.node(i, j), 64)?;
            }
        }
        Ok(RegularizedField { field, eps, variance, log_cr })
    }
}

// ---------------------------------------------------------------------------
// Circulant embedding

/// Covariance of a lattice field as a function of the lag `(di, dj)`.
#[derive(Clone, Debug)]
pub struct LagTable {
    pub spacing: f64,
    /// `values[[|di|, |dj|]]`
    pub values: Array2<f64>,
}

impl LagTable {
    #[inline]
    pub fn get(&self, di: isize, dj: isize) -> f64 {
        self.values[[di.unsigned_abs(), dj.unsigned_abs()]]
    }

    pub fn variance(&self) -> f64 {
        self.values[[0, 0]]
    }

    pub fn max_lag(&self) -> usize {
        self.values.dim().0 - 1
    }
}

/// Stationary isotropic Gaussian field on an `n x n` window of a periodic
/// `m x m` lattice, sampled by circulant embedding.
pub struct TorusSampler {
    pub n: usize,
    pub m: usize,
    pub spacing: f64,
    /// `log CR` reported for every node.
    pub log_cr: f64,
    sqrt_eig: Vec<f64>,
    fft: Fft2,
    filters: Mutex<Vec<(u64, Arc<Vec<f64>>)>>,
}

impl std::fmt::Debug for TorusSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TorusSampler").field("n", &self.n).field("m", &self.m).field("spacing", &self.spacing).finish()
    }
}

impl TorusSampler {
    /// Embed the radial covariance `kernel(d)` on an `m x m` torus.
    pub fn from_kernel(n: usize, m: usize, spacing: f64, log_cr: f64, kernel: impl Fn(f64) -> f64) -> Result<Self> {
        if n == 0 || m < n || !(spacing > 0.0) {
            return invalid("need 0 < n <= m and positive spacing");
        }
        let mut c = vec![Complex64::new(0.0, 0.0); m * m];
        for i in 0..m {
            let di = i.min(m - i) as f64 * spacing;
            for j in 0..m {
                let dj = j.min(m - j) as f64 * spacing;
                c[i * m + j] = Complex64::new(kernel(di.hypot(dj)), 0.0);
            }
        }
        let fft = Fft2::new(m);
        fft.forward(&mut c);
        let max = c.iter().map(|z| z.re).fold(0.0, f64::max);
        let min = c.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if min < -1e-8 * max {
            return Err(Error::NotPositiveDefinite(min / max));
        }
        let scale = 1.0 / (m * m) as f64;
        let sqrt_eig = c.iter().map(|z| (z.re.max(0.0) * scale).sqrt()).collect();
        Ok(TorusSampler { n, m, spacing, log_cr, sqrt_eig, fft, filters: Mutex::new(Vec::new()) })
    }

    /// Exact-scaling field cut off at the lattice scale:
    /// covariance `log+(R / (h v d)) + 2 - 2 sqrt(d / (h v d))` on a `2n` torus.
    pub fn exact_scaling(n: usize, h: f64, r: f64) -> Result<Self> {
        if n as f64 * h > r / 2.0 + 1e-12 {
            return invalid(format!("window {} exceeds R/2 = {}", n as f64 * h, r / 2.0));
        }
        Self::from_kernel(n, 2 * n, h, r.ln(), |d| cov_star_scale_cutoff([0.0; 2], [d, 0.0], h, h, r))
    }

    /// Exact-scaling field on the whole `n x n` torus of side `n h`; with
    /// `R <= n h / 2` the embedding is the periodization of the continuum kernel.
    pub fn exact_scaling_periodic(n: usize, h: f64, r: f64) -> Result<Self> {
        if r > n as f64 * h / 2.0 + 1e-12 {
            return invalid(format!("R = {r} exceeds half the torus side {}", n as f64 * h / 2.0));
        }
        Self::from_kernel(n, n, h, r.ln(), |d| cov_star_scale_cutoff([0.0; 2], [d, 0.0], h, h, r))
    }

    /// `|omega|` of torus frequency `(a, b)`.
    fn freq(&self, a: usize, b: usize) -> f64 {
        let m = self.m;
        let ka = if a <= m / 2 { a as f64 } else { a as f64 - m as f64 };
        let kb = if b <= m / 2 { b as f64 } else { b as f64 - m as f64 };
        2.0 * PI * ka.hypot(kb) / (m as f64 * self.spacing)
    }

    fn multiplier(&self, eps: f64) -> Arc<Vec<f64>> {
        if eps <= 0.0 {
            return Arc::new(self.sqrt_eig.clone());
        }
        let key = eps.to_bits();
        let mut cache = self.filters.lock().unwrap();
        if let Some((_, f)) = cache.iter().find(|(k, _)| *k == key) {
            return f.clone();
        }
        let m = self.m;
        let mut f = self.sqrt_eig.clone();
        for a in 0..m {
            for b in 0..m {
                f[a * m + b] *= libm::j0(eps * self.freq(a, b));
            }
        }
        let f = Arc::new(f);
        if cache.len() >= 4 {
            cache.remove(0);
        }
        cache.push((key, f.clone()));
        f
    }

    /// Field on the window from seed `seed`; `eps > 0` returns the
    /// `eps`-circle average of the same realization.
    pub fn sample(&self, seed: u64, eps: f64) -> LatticeField {
        let (a, _) = self.sample_pair(seed, eps);
        a
    }

    /// Two independent fields from one FFT.
    pub fn sample_pair(&self, seed: u64, eps: f64) -> (LatticeField, LatticeField) {
        let m = self.m;
        let mult = self.multiplier(eps);
        let mut r = rng::stream(seed);
        let mut buf: Vec<Complex64> = mult
            .iter()
            .map(|&s| {
                let a: f64 = r.sample(StandardNormal);
                let b: f64 = r.sample(StandardNormal);
                Complex64::new(a * s, b * s)
            })
            .collect();
        self.fft.forward(&mut buf);
        let n = self.n;
        let re = Array2::from_shape_fn((n, n), |(i, j)| buf[i * m + j].re);
        let im = Array2::from_shape_fn((n, n), |(i, j)| buf[i * m + j].im);
        let mk = |values| LatticeField { values, origin: [0.0, 0.0], spacing: self.spacing, periodic: false };
        (mk(re), mk(im))
    }

    /// Exact lattice covariance of [`TorusSampler::sample`] at `eps`, for lags
    /// up to `n - 1` in each axis.
    pub fn lag_table(&self, eps: f64) -> LagTable {
        let m = self.m;
        let mult = self.multiplier(eps);
        let mut buf: Vec<Complex64> = mult.iter().map(|&s| Complex64::new(s * s, 0.0)).collect();
        self.fft.inverse(&mut buf);
        let n = self.n;
        LagTable { spacing: self.spacing, values: Array2::from_shape_fn((n, n), |(i, j)| buf[i * m + j].re) }
    }

    /// Pointwise variance at `eps`, equal to `lag_table(eps).variance()`.
    pub fn variance(&self, eps: f64) -> f64 {
        self.multiplier(eps).iter().map(|s| s * s).sum()
    }

    /// Two independent regularized fields from one FFT, with constant variance
    /// and `log CR`.
    pub fn regularized_pair(&self, seed: u64, eps: f64) -> (RegularizedField, RegularizedField) {
        let (a, b) = self.sample_pair(seed, eps);
        let var = self.variance(eps);
        let n = self.n;
        let pack = |field| RegularizedField {
            field,
            eps,
            variance: Array2::from_elem((n, n), var),
            log_cr: Array2::from_elem((n, n), self.log_cr),
        };
        (pack(a), pack(b))
    }

    /// Draw with regularization `eps`, packaged for the chaos builder.
    pub fn realization(&self, seed: u64) -> TorusRealization<'_> {
        TorusRealization { sampler: self, seed, origin: [0.0, 0.0] }
    }
}

/// A seeded draw of a [`TorusSampler`], placed with its window at `origin`.
pub struct TorusRealization<'a> {
    pub sampler: &'a TorusSampler,
    pub seed: u64,
    pub origin: Point,
}

impl TorusRealization<'_> {
    pub fn at(mut self, origin: Point) -> Self {
        self.origin = origin;
        self
    }
}

impl GaussianField for TorusRealization<'_> {
    fn regularize(&self, eps: f64, _grid: usize) -> Result<RegularizedField> {
        if !(eps >= 0.0) {
            return invalid("eps must be nonnegative");
        }
        let mut field = self.sampler.sample(self.seed, eps);
        field.origin = self.origin;
        let var = self.sampler.variance(eps);
        let n = self.sampler.n;
        Ok(RegularizedField {
            field,
            eps,
            variance: Array2::from_elem((n, n), var),
            log_cr: Array2::from_elem((n, n), self.sampler.log_cr),
        })
    }
}

/// Exact-scaling field on an `n x n` lattice of spacing `h`.
pub fn sample_exact_scaling_lattice(n: usize, h: f64, r: f64, seed: u64) -> Result<LatticeField> {
    Ok(TorusSampler::exact_scaling(n, h, r)?.sample(seed, 0.0))
}

// ---------------------------------------------------------------------------
// Markov decomposition

/// Split of the GFF on `Q(center, R)` into the harmonic extension of its
/// boundary values and an independent Dirichlet field inside.
///
/// All three fields live on the `(grid+1)^2` vertices of the square, stored
/// as lattice fields whose nodes are those vertices.
#[derive(Clone, Debug)]
pub struct MarkovDecomposition {
    pub center: Point,
    pub half_side: f64,
    pub restriction: LatticeField,
    pub harmonic: LatticeField,
    pub inner: LatticeField,
}

pub fn markov_decompose(field: &SpectralField, center: Point, half_side: f64, grid: usize) -> Result<MarkovDecomposition> {
    let r = half_side;
    if center[0] - r <= 0.0 || center[0] + r >= 1.0 || center[1] - r <= 0.0 || center[1] + r >= 1.0 {
        return Err(Error::Domain(center[0], center[1]));
    }
    if grid < 2 {
        return invalid("grid must be at least 2");
    }
    let h = 2.0 * r / grid as f64;
    let k = grid + 1;
    let xs: Vec<f64> = (0..k).map(|i| center[0] - r + i as f64 * h).collect();
    let ys: Vec<f64> = (0..k).map(|j| center[1] - r + j as f64 * h).collect();
    let modes = field.modes;
    let sx = Array2::from_shape_fn((k, modes), |(i, m)| ((m + 1) as f64 * PI * xs[i]).sin());
    let sy = Array2::from_shape_fn((modes, k), |(n, j)| ((n + 1) as f64 * PI * ys[j]).sin());
    let values = sx.dot(&field.scaled(0.0)).dot(&sy);

    let harmonic = harmonic_extension(&values);
    let inner = &values - &harmonic;
    let origin = [center[0] - r - 0.5 * h, center[1] - r - 0.5 * h];
    let mk = |v: Array2<f64>| LatticeField { values: v, origin, spacing: h, periodic: false };
    Ok(MarkovDecomposition { center, half_side, restriction: mk(values), harmonic: mk(harmonic), inner: mk(inner) })
}

/// Discrete harmonic function with the boundary values of `b`, by conjugate
/// gradients on the five-point Laplacian.
pub fn harmonic_extension(b: &Array2<f64>) -> Array2<f64> {
    let (k, k2) = b.dim();
    assert_eq!(k, k2);
    let mut u = b.clone();
    if k <= 2 {
        return u;
    }
    let ni = k - 2;
    // right-hand side from boundary values
    let idx = |i: usize, j: usize| (i - 1) * ni + (j - 1);
    let mut rhs = vec![0.0; ni * ni];
    for i in 1..k - 1 {
        for j in 1..k - 1 {
            let mut s = 0.0;
            if i == 1 {
                s += b[[0, j]];
            }
            if i == k - 2 {
                s += b[[k - 1, j]];
            }
            if j == 1 {
                s += b[[i, 0]];
            }
            if j == k - 2 {
                s += b[[i, k - 1]];
            }
            rhs[idx(i, j)] = s;
        }
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        for i in 0..ni {
            for j in 0..ni {
                let mut v = 4.0 * x[i * ni + j];
                if i > 0 {
                    v -= x[(i - 1) * ni + j];
                }
                if i + 1 < ni {
                    v -= x[(i + 1) * ni + j];
                }
                if j > 0 {
                    v -= x[i * ni + j - 1];
                }
                if j + 1 < ni {
                    v -= x[i * ni + j + 1];
                }
                out[i * ni + j] = v;
            }
        }
    };
    let mut x = vec![0.0; ni * ni];
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; ni * ni];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut rr = dot(&r, &r);
    let stop = 1e-26 * dot(&rhs, &rhs).max(1e-300);
    for _ in 0..10 * ni * ni {
        if rr <= stop {
            break;
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for t in 0..x.len() {
            x[t] += alpha * p[t];
            r[t] -= alpha * ap[t];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for t in 0..p.len() {
            p[t] = r[t] + beta * p[t];
        }
    }
    for i in 1..k - 1 {
        for j in 1..k - 1 {
            u[[i, j]] = x[idx(i, j)];
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::green_dirichlet_square;
    use approx::assert_relative_eq;

    fn moments(xs: &[f64]) -> (f64, f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let c2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let c3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let c4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        (mean, c2, c3 / c2.powf(1.5), c4 / (c2 * c2) - 3.0)
    }

    #[test]
    fn spectral_grid_matches_direct_sum() {
        let f = sample_gff_square(24, 5).unwrap();
        let g = 32;
        let grid = f.grid_values(g, 0.03);
        let var = SpectralField::grid_variance(24, g, 0.03);
        for &(i, j) in &[(3, 4), (10, 20), (16, 16)] {
            let x = [(i as f64 + 0.5) / g as f64, (j as f64 + 0.5) / g as f64];
            assert_relative_eq!(grid[[i, j]], f.circle_average(x, 0.03).unwrap(), epsilon = 1e-10);
            assert_relative_eq!(var[[i, j]], SpectralField::circle_average_variance(24, x, 0.03), epsilon = 1e-10);
        }
    }

    #[test]
    fn parseval() {
        let f = sample_gff_square(40, 9).unwrap();
        let g = 64;
        let grid = f.grid_values(g, 0.0);
        let l2 = grid.iter().map(|v| v * v).sum::<f64>() / (g * g) as f64;
        assert!((l2 - f.l2_norm_squared()).abs() < 1e-6 * l2);
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(sample_gff_square(16, 3).unwrap(), sample_gff_square(16, 3).unwrap());
        assert_ne!(sample_gff_square(16, 3).unwrap(), sample_gff_square(16, 4).unwrap());
        let t = TorusSampler::exact_scaling(16, 0.01, 1.0).unwrap();
        assert_eq!(t.sample(11, 0.0), t.sample(11, 0.0));
    }

    #[test]
    fn circle_average_variance_tracks_green_function() {
        // Var Gamma_eps(x) = log(1/eps) + log CR(x) + o(1)
        let (x, eps) = ([0.4, 0.55], 0.02);
        let v = SpectralField::circle_average_variance(1024, x, eps);
        let expect = (1.0 / eps).ln() + log_conformal_radius_square(x, 64).unwrap();
        assert!((v - expect).abs() < 0.01, "{v} {expect}");
    }

    #[test]
    fn spectral_samples_are_gaussian_with_green_covariance() {
        let (x, y) = ([0.3, 0.4], [0.6, 0.7]);
        let modes = 48;
        let n = 4000;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for s in 0..n {
            let f = sample_gff_square(modes, rng::mix64(1, 2, s as u64)).unwrap();
            a.push(f.value_at(x));
            b.push(f.value_at(y));
        }
        let (ma, va, skew, kurt) = moments(&a);
        let cov = a.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>() / n as f64;
        let nf = n as f64;
        assert!(ma.abs() < 3.0 * (va / nf).sqrt());
        assert!(skew.abs() < 3.0 * (6.0 / nf).sqrt());
        assert!(kurt.abs() < 3.0 * (24.0 / nf).sqrt());
        // covariance of the truncated series against the Green function
        let mut exact = 0.0;
        for m in 1..=modes {
            for k in 1..=modes {
                exact += amplitude(m, k, 0.0).powi(2)
                    * (m as f64 * PI * x[0]).sin()
                    * (k as f64 * PI * x[1]).sin()
                    * (m as f64 * PI * y[0]).sin()
                    * (k as f64 * PI * y[1]).sin();
            }
        }
        let g = green_dirichlet_square(x, y, 64).unwrap();
        assert!((exact - g).abs() < 0.02, "{exact} {g}");
        let vb = moments(&b).1;
        assert!((cov - exact).abs() < 3.0 * ((va * vb + exact * exact) / nf).sqrt());
    }

    #[test]
    fn exact_scaling_lattice_covariance() {
        let (n, h, r) = (32, 1.0 / 64.0, 1.0);
        let t = TorusSampler::exact_scaling(n, h, r).unwrap();
        let lag = t.lag_table(0.0);
        for &(i, j) in &[(0, 0), (1, 0), (3, 4), (20, 31)] {
            let d = (i as f64).hypot(j as f64) * h;
            let want = cov_star_scale_cutoff([0.0; 2], [d, 0.0], h, h, r);
            assert!((lag.values[[i, j]] - want).abs() < 1e-8);
        }
        assert_relative_eq!(lag.variance(), (r / h).ln() + 2.0, epsilon = 1e-8);
        assert!(TorusSampler::exact_scaling(40, h, r).is_err());
    }

    #[test]
    fn torus_samples_have_lag_covariance() {
        let t = TorusSampler::exact_scaling(16, 1.0 / 32.0, 1.0).unwrap();
        let eps = 0.05;
        let lag = t.lag_table(eps);
        let reps = 3000;
        let (mut s00, mut s01) = (0.0, 0.0);
        for k in 0..reps {
            let (a, b) = t.sample_pair(k as u64, eps);
            for f in [a, b] {
                s00 += f.values[[5, 5]] * f.values[[5, 5]];
                s01 += f.values[[5, 5]] * f.values[[8, 9]];
            }
        }
        let n = 2.0 * reps as f64;
        let v = lag.variance();
        assert!((s00 / n - v).abs() < 4.0 * v * (2.0 / n).sqrt());
        assert!((s01 / n - lag.get(3, 4)).abs() < 4.0 * v * (2.0 / n).sqrt());
        assert!(lag.variance() < (1.0f64 / eps).ln() + 2.0);
        assert!((t.variance(eps) - v).abs() < 1e-12 * v);
    }

    #[test]
    fn markov_boundary_and_inner_covariance() {
        let (c, r) = ([0.5, 0.5], 0.25);
        let grid = 32;
        let reps = 400;
        let (p, q) = ((12, 12), (20, 18));
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for k in 0..reps {
            let f = sample_gff_square(96, 1000 + k).unwrap();
            let d = markov_decompose(&f, c, r, grid).unwrap();
            if k == 0 {
                for i in 0..=grid {
                    assert!((d.harmonic.values[[0, i]] - d.restriction.values[[0, i]]).abs() < 1e-12);
                    assert!((d.harmonic.values[[i, grid]] - d.restriction.values[[i, grid]]).abs() < 1e-12);
                    assert!(d.inner.values[[grid, i]].abs() < 1e-12);
                }
            }
            let v = d.inner.values[[p.0, p.1]] * d.inner.values[[q.0, q.1]];
            acc += v;
            acc2 += v * v;
        }
        let mean = acc / reps as f64;
        let se = ((acc2 / reps as f64 - mean * mean) / reps as f64).sqrt();
        // Green function of Q(c, r), by scaling the unit square
        let unit = |ij: (usize, usize)| [ij.0 as f64 / grid as f64, ij.1 as f64 / grid as f64];
        let g = green_dirichlet_square(unit(p), unit(q), 64).unwrap();
        assert!((mean - g).abs() < 3.0 * se + 0.03, "{mean} {g} {se}");
    }
}
