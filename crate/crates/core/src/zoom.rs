//! Multilevel chaos around a point, for square masses over many dyadic
//! scales without a full-resolution lattice.
//!
//! The field is the star-scale model with undamped bands (`delta = inf`),
//! cut off at scale `sigma`: `X_sigma = int_0^{log(R/sigma)} Y_u du`. Level `k`
//! holds `X_{sigma_k}` on a `cells x cells` grid tiling `Q(x, r_k)` with
//! `r_k = r_0 2^{-k}`, `sigma_k = r_k / 8` and spacing `h_k = 2 r_k / cells`.
//! Level `k` is the bicubic interpolation of level `k-1` plus the band
//! `sigma_k < s <= sigma_{k-1}`, whose covariance depends on `d / h_k` only, so
//! one unit-spacing sampler serves every level.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;

use crate::chaos::{ChaosField, SquareMass};
use crate::covariance::{CovarianceModel, SeedKernel};
use crate::error::{invalid, Error, Result};
use crate::fft::good_size;
use crate::field::TorusSampler;
use crate::geom::{Point, Rect};
use crate::rng;

#[derive(Clone, Debug)]
pub struct ZoomConfig {
    pub beta: f64,
    /// Range `R` of the covariance.
    pub range: f64,
    /// Coarsest half-side `r_0`.
    pub r0: f64,
    pub levels: usize,
    /// Cells per side at every level (even).
    pub cells: usize,
    /// `sigma_k / r_k`.
    pub cutoff_ratio: f64,
    /// Region in which probe centres may lie.
    pub probe_region: Rect,
}

impl ZoomConfig {
    pub fn radius(&self, k: usize) -> f64 {
        self.r0 * 0.5f64.powi(k as i32)
    }

    pub fn spacing(&self, k: usize) -> f64 {
        2.0 * self.radius(k) / self.cells as f64
    }

    pub fn cutoff(&self, k: usize) -> f64 {
        self.cutoff_ratio * self.radius(k)
    }
}

pub struct ZoomSampler {
    pub cfg: ZoomConfig,
    kernel: Arc<SeedKernel>,
    log_cr: f64,
    base: TorusSampler,
    base_origin: Point,
    band: TorusSampler,
}

/// Circulant sampler for a kernel of compact support, enlarging the torus
/// until the embedding is nonnegative.
fn compact_sampler(n: usize, h: f64, support: f64, kernel: impl Fn(f64) -> f64) -> Result<TorusSampler> {
    let mut m = good_size(2 * n);
    let safe = good_size(n + (2.0 * support / h).ceil() as usize + 1);
    loop {
        match TorusSampler::from_kernel(n, m, h, 0.0, &kernel) {
            Ok(s) => return Ok(s),
            Err(Error::NotPositiveDefinite(_)) if m < safe => m = good_size(m + m / 2),
            Err(e) => return Err(e),
        }
    }
}

impl ZoomSampler {
    pub fn new(cfg: ZoomConfig, kernel: Arc<SeedKernel>) -> Result<Self> {
        if !(cfg.beta > 0.0 && cfg.beta * cfg.beta < 2.0) {
            return invalid("beta must lie in (0, sqrt 2)");
        }
        if cfg.cells < 16 || cfg.cells % 2 != 0 {
            return invalid("cells must be even and at least 16");
        }
        if cfg.levels < 1 || !(cfg.cutoff_ratio > 0.0) || !(cfg.r0 > 0.0) {
            return invalid("need at least one level and positive r0, cutoff ratio");
        }
        let (h0, s0, big_r) = (cfg.spacing(0), cfg.cutoff(0), cfg.range);
        if s0 >= big_r {
            return invalid("coarsest cutoff must be below the range R");
        }
        // base window: probe region grown by r0, snapped to the level-0 grid
        let lo = cfg.probe_region.lo();
        let base_origin = [lo[0] - cfg.r0, lo[1] - cfg.r0];
        let side = (2.0 * cfg.probe_region.half[0].max(cfg.probe_region.half[1]) + 2.0 * cfg.r0) / h0;
        let n_base = side.ceil() as usize + 1;
        let k0 = kernel.clone();
        let top = (big_r / s0).ln();
        let base = compact_sampler(n_base, h0, big_r, move |d| k0.band(d / big_r, 0.0, top, f64::INFINITY))?;
        // band between sigma_{k-1} and sigma_k in units of h_k
        let s_unit = cfg.cutoff_ratio * cfg.cells as f64 / 2.0;
        let k1 = kernel.clone();
        let band = compact_sampler(cfg.cells, 1.0, 2.0 * s_unit, move |d| {
            k1.band(d / (2.0 * s_unit), 0.0, 2f64.ln(), f64::INFINITY)
        })?;
        let log_cr = CovarianceModel::StarScale { kernel: kernel.clone(), delta: f64::INFINITY, r: big_r }
            .log_conformal_radius([0.0; 2])?;
        Ok(ZoomSampler { cfg, kernel, log_cr, base, base_origin, band })
    }

    pub fn kernel(&self) -> &Arc<SeedKernel> {
        &self.kernel
    }

    /// Coarse field shared by all probes of one replica.
    pub fn base_field(&self, seed: u64) -> BaseField {
        BaseField { values: self.base.sample(rng::mix64(seed, rng::tag_of("zoom-base"), 0), 0.0).values }
    }

    /// Snap a point to the nearest level-0 lattice corner.
    pub fn snap(&self, x: Point) -> Point {
        let h = self.cfg.spacing(0);
        let o = self.base_origin;
        [o[0] + ((x[0] - o[0]) / h).round() * h, o[1] + ((x[1] - o[1]) / h).round() * h]
    }

    /// Chaos around `x` (snapped to the level-0 lattice) for one replica.
    pub fn zoom(&self, base: &BaseField, x: Point, seed: u64, probe: u64) -> Result<ZoomChaos> {
        let cfg = &self.cfg;
        let x = self.snap(x);
        if !cfg.probe_region.contains(x) {
            return Err(Error::OutOfFootprint(format!("probe ({}, {}) outside the probe region", x[0], x[1])));
        }
        let c = cfg.cells;
        let h0 = cfg.spacing(0);
        let i0 = ((x[0] - cfg.r0 - self.base_origin[0]) / h0).round() as usize;
        let j0 = ((x[1] - cfg.r0 - self.base_origin[1]) / h0).round() as usize;
        let mut field = Array2::from_shape_fn((c, c), |(i, j)| base.values[[i0 + i, j0 + j]]);
        let b2 = cfg.beta * cfg.beta;
        let mut levels = Vec::with_capacity(cfg.levels);
        for k in 0..cfg.levels {
            if k > 0 {
                let band = self.band.sample(rng::mix64(seed, rng::tag_of("zoom-band"), probe * 64 + k as u64), 0.0);
                field = refine(&field) + &band.values;
            }
            let r = cfg.radius(k);
            let var = (cfg.range / cfg.cutoff(k)).ln();
            let scale = (0.5 * b2 * (var - self.log_cr)).exp();
            let vals = field.mapv(|g| Complex64::from_polar(scale, cfg.beta * g));
            levels.push(ChaosField::from_values(vals, [x[0] - r, x[1] - r], cfg.spacing(k), cfg.beta, cfg.cutoff(k)));
        }
        Ok(ZoomChaos { center: x, beta: cfg.beta, levels })
    }
}

/// Level-0 field over the whole probe region.
pub struct BaseField {
    values: Array2<f64>,
}

// Keys cubic convolution weights for fractional offset t in [0, 1).
fn keys(t: f64) -> [f64; 4] {
    let a = -0.5;
    let w = |s: f64| {
        let s = s.abs();
        if s <= 1.0 {
            (a + 2.0) * s * s * s - (a + 3.0) * s * s + 1.0
        } else if s < 2.0 {
            a * s * s * s - 5.0 * a * s * s + 8.0 * a * s - 4.0 * a
        } else {
            0.0
        }
    };
    [w(1.0 + t), w(t), w(1.0 - t), w(2.0 - t)]
}

/// Interpolate the central half of a `c x c` grid onto a `c x c` grid of half
/// the spacing.
fn refine(coarse: &Array2<f64>) -> Array2<f64> {
    let c = coarse.dim().0;
    let q = c / 4;
    // fine node j sits at coarse index q - 1/4 + j/2
    let pos = |j: usize| {
        let u = q as f64 - 0.25 + 0.5 * j as f64;
        let f = u.floor();
        (f as usize, keys(u - f))
    };
    let cols: Vec<(usize, [f64; 4])> = (0..c).map(pos).collect();
    // along the second axis first
    let mut tmp = Array2::<f64>::zeros((c, c));
    for i in 0..c {
        for (j, (b, w)) in cols.iter().enumerate() {
            tmp[[i, j]] = (0..4).map(|t| w[t] * coarse[[i, b + t - 1]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((c, c));
    for (i, (b, w)) in cols.iter().enumerate() {
        for j in 0..c {
            out[[i, j]] = (0..4).map(|t| w[t] * tmp[[b + t - 1, j]]).sum();
        }
    }
    out
}

/// Chaos at levels `r_0 2^{-k}` around one centre.
pub struct ZoomChaos {
    pub center: Point,
    pub beta: f64,
    pub levels: Vec<ChaosField>,
}

impl SquareMass for ZoomChaos {
    /// Mass from the finest level whose window contains `q`.
    fn mass(&self, q: &Rect) -> Result<Complex64> {
        let tol = 1e-9;
        for lvl in self.levels.iter().rev() {
            let fp = lvl.footprint();
            let inside = (0..2).all(|a| {
                q.lo()[a] >= fp.lo()[a] - tol * lvl.spacing && q.hi()[a] <= fp.hi()[a] + tol * lvl.spacing
            });
            if inside {
                return lvl.integrate_rect(q);
            }
        }
        Err(Error::OutOfFootprint("query outside the coarsest zoom level".into()))
    }

    fn beta(&self) -> f64 {
        self.beta
    }
}
