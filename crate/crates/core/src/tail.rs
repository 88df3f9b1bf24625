//! From moment growth `m_{2N} ~ N^{beta^2 N/2} e^{c** N}` to the tail
//! `P(|mu| > t) ~ exp(-c* t^{4/beta^2})`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub n: usize,
    pub m_2n: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSequence {
    pub entries: Vec<MomentEntry>,
}

impl MomentSequence {
    pub fn new(entries: Vec<MomentEntry>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[1].n <= w[0].n {
                return invalid("orders must be strictly increasing");
            }
        }
        if entries.iter().any(|e| !(e.m_2n > 0.0) || e.n == 0) {
            return invalid("moments must be positive and orders at least 1");
        }
        Ok(MomentSequence { entries })
    }

    /// `m_{2N} = N^{beta^2 N/2} exp(c** N + extra(N))` for `N = 1..=n_max`.
    pub fn synthetic(beta: f64, c_star_star: f64, n_max: usize, extra: impl Fn(f64) -> f64) -> Self {
        let b2 = beta * beta;
        let entries = (1..=n_max)
            .map(|n| {
                let nf = n as f64;
                MomentEntry { n, m_2n: (0.5 * b2 * nf * nf.ln() + c_star_star * nf + extra(nf)).exp(), stderr: 0.0 }
            })
            .collect();
        MomentSequence { entries }
    }
}

/// `c* = (beta^2/2) exp(-1 - 2 c** / beta^2)`, `alpha = 4 / beta^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailConstants {
    pub beta: f64,
    pub c_star_star: f64,
    pub c_star: f64,
    pub alpha: f64,
}

impl TailConstants {
    pub fn from_c_star_star(beta: f64, c_star_star: f64) -> Result<Self> {
        let c_star = cstar_from_cstarstar(c_star_star, beta)?;
        Ok(TailConstants { beta, c_star_star, c_star, alpha: 4.0 / (beta * beta) })
    }

    pub fn check(&self) -> Result<()> {
        let want = cstar_from_cstarstar(self.c_star_star, self.beta)?;
        if (want - self.c_star).abs() > 1e-12 * want.max(1.0) || (self.alpha - 4.0 / (self.beta * self.beta)).abs() > 1e-12 {
            return invalid("tail constants violate c* = (beta^2/2) exp(-1 - 2c**/beta^2)");
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for TailConstants {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            beta: f64,
            c_star_star: f64,
            c_star: f64,
            alpha: f64,
        }
        let r = Raw::deserialize(d)?;
        let t = TailConstants { beta: r.beta, c_star_star: r.c_star_star, c_star: r.c_star, alpha: r.alpha };
        t.check().map_err(serde::de::Error::custom)?;
        Ok(t)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta * beta < 2.0) {
        return invalid(format!("beta must lie in (0, sqrt 2), got {beta}"));
    }
    Ok(())
}

pub fn cstar_from_cstarstar(c_star_star: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let b2 = beta * beta;
    Ok(0.5 * b2 * (-1.0 - 2.0 * c_star_star / b2).exp())
}

pub fn cstarstar_from_cstar(c_star: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if !(c_star > 0.0) {
        return invalid("c* must be positive");
    }
    let b2 = beta * beta;
    Ok(-0.5 * b2 * (1.0 + (2.0 * c_star / b2).ln()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CStarStarFit {
    pub c_star_star: f64,
    /// coefficient of `1/N`
    pub slope: f64,
    /// root-mean-square weighted residual
    pub residual: f64,
}

/// Least-squares fit of `y_N = (log m_{2N} - (beta^2 N/2) log N) / N = c** + b/N`.
pub fn fit_cstarstar(seq: &MomentSequence, beta: f64) -> Result<CStarStarFit> {
    if seq.entries.len() < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 moments, got {}", seq.entries.len())));
    }
    let b2 = beta * beta;
    let weighted = seq.entries.iter().all(|e| e.stderr > 0.0);
    let pts: Vec<(f64, f64, f64)> = seq
        .entries
        .iter()
        .map(|e| {
            let n = e.n as f64;
            let y = (e.m_2n.ln() - 0.5 * b2 * n * n.ln()) / n;
            let w = if weighted { (n * e.m_2n / e.stderr).powi(2) } else { 1.0 };
            (1.0 / n, y, w)
        })
        .collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let c = my - slope * mx;
    let residual = (pts.iter().map(|p| p.2 * (p.1 - c - slope * p.0).powi(2)).sum::<f64>() / sw).sqrt();
    Ok(CStarStarFit { c_star_star: c, slope, residual })
}

/// `min_N m_{2N} / t^{2N}` and the minimizing `N`.
pub fn markov_envelope(seq: &MomentSequence, t: f64) -> Result<(f64, usize)> {
    if !(t > 0.0) {
        return invalid("t must be positive");
    }
    let best = seq
        .entries
        .iter()
        .map(|e| (e.m_2n.ln() - 2.0 * e.n as f64 * t.ln(), e.n))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
    Ok((best.0.exp(), best.1))
}

/// The even integer in `[d alpha t^alpha, d alpha t^alpha + 2)`.
pub fn k_of_t(t: f64, d_star: f64, alpha: f64) -> u64 {
    let v = d_star * alpha * t.powf(alpha);
    let k = 2.0 * (v / 2.0).ceil();
    k.max(0.0) as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub t: f64,
    pub fraction: f64,
    pub stderr: f64,
}

pub const MIN_SURVIVAL_SAMPLES: usize = 10_000;

/// Fraction of samples strictly above each `t`, with binomial stderr.
pub fn empirical_survival(samples: &[f64], t_grid: &[f64]) -> Result<Vec<SurvivalPoint>> {
    if samples.len() < MIN_SURVIVAL_SAMPLES {
        return Err(Error::InsufficientData(format!("need at least {MIN_SURVIVAL_SAMPLES} samples")));
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    Ok(t_grid
        .iter()
        .map(|&t| {
            let above = s.len() - s.partition_point(|&x| x <= t);
            let p = above as f64 / n;
            SurvivalPoint { t, fraction: p, stderr: (p * (1.0 - p) / n).sqrt() }
        })
        .collect())
}

/// Geometric grid of `points` thresholds between the `q_lo` and `q_hi`
/// quantiles of the samples.
pub fn quantile_grid(samples: &[f64], q_lo: f64, q_hi: f64, points: usize) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let at = |q: f64| s[((q * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
    let (lo, hi) = (at(q_lo), at(q_hi));
    (0..points).map(|i| lo * (hi / lo).powf(i as f64 / (points - 1) as f64)).collect()
}

/// Survival fractions in which the estimate is resolvable: at least
/// `min_count` exceedances and at most `max_fraction`.
pub fn resolvable_window(curve: &[SurvivalPoint], n_samples: usize, min_count: f64, max_fraction: f64) -> Vec<SurvivalPoint> {
    curve
        .iter()
        .filter(|p| p.fraction * n_samples as f64 >= min_count && p.fraction <= max_fraction && p.fraction > 0.0)
        .copied()
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSlope {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Least-squares slope of `log(-log S(t))` against `log t`.
pub fn tail_slope(curve: &[SurvivalPoint]) -> Result<TailSlope> {
    let pts: Vec<(f64, f64)> =
        curve.iter().filter(|p| p.fraction > 0.0 && p.fraction < 1.0).map(|p| (p.t.ln(), (-p.fraction.ln()).ln())).collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData("fewer than 3 resolvable tail points".into()));
    }
    let (slope, intercept) = least_squares(&pts);
    Ok(TailSlope { slope, intercept, points: pts.len() })
}

pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub beta: f64,
    pub c_star_star: f64,
    pub c_star: f64,
    pub fit_residual: f64,
    /// `(t, envelope)`
    pub envelope_curve: Vec<(f64, f64)>,
    /// `(t, fraction, stderr)`
    pub survival_curve: Vec<(f64, f64, f64)>,
}
