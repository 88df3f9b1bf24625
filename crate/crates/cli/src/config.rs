//! Flat `key = value` configuration.
//!
//! Grammar: one `key = value` per line; `#` starts a comment; blank lines are
//! ignored; lists are comma separated; `inf` is accepted wherever a real is.
//! Unknown keys, duplicate keys and malformed values are parse errors. Every
//! key has a default, so an empty file is a valid `moments` configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Moments,
    Scaling,
    Lil,
    FastPoints,
    Tail,
    Besov,
    WhiteNoise,
    ConstantA,
    SampleField,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Moments,
        Experiment::Scaling,
        Experiment::Lil,
        Experiment::FastPoints,
        Experiment::Tail,
        Experiment::Besov,
        Experiment::WhiteNoise,
        Experiment::ConstantA,
        Experiment::SampleField,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Moments => "moments",
            Experiment::Scaling => "scaling",
            Experiment::Lil => "lil",
            Experiment::FastPoints => "fastpoints",
            Experiment::Tail => "tail",
            Experiment::Besov => "besov",
            Experiment::WhiteNoise => "whitenoise",
            Experiment::ConstantA => "constant-a",
            Experiment::SampleField => "sample-field",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| format!("unknown experiment '{s}'"))
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldModel {
    Spectral,
    Lattice,
}

impl FromStr for FieldModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spectral" => Ok(FieldModel::Spectral),
            "lattice" => Ok(FieldModel::Lattice),
            _ => Err(format!("unknown field model '{s}'")),
        }
    }
}

impl fmt::Display for FieldModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldModel::Spectral => "spectral",
            FieldModel::Lattice => "lattice",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub beta: f64,
    pub replicas: u64,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub threads: usize,
    /// Replica units per resumable shard.
    pub shard_size: u64,
    /// Monte Carlo points per quadrature.
    pub n_pts: u64,

    // moments
    pub radii: Vec<f64>,
    pub half_side: f64,
    pub area: f64,
    pub aspects: Vec<f64>,
    pub orders: Vec<usize>,

    // scaling, lil
    pub depth: usize,
    pub short_depth: usize,
    pub probes: usize,

    // fastpoints
    pub thresholds: Vec<f64>,
    pub levels: Vec<u32>,

    // tail
    pub cells: usize,
    pub moment_orders: usize,

    // besov
    pub besov_depth: usize,
    pub pq: Vec<(f64, f64)>,

    // whitenoise
    pub lattice: usize,
    pub cells_per_unit: usize,
    pub wn_radii: Vec<f64>,
    pub reference_radius: f64,
    pub a_points: u64,

    // constant-a
    pub w_cutoff: f64,

    // sample-field
    pub model: FieldModel,
    pub modes: usize,
    pub grid: usize,
    pub eps: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::Moments,
            beta: 1.0,
            replicas: 20,
            master_seed: 0,
            output_dir: PathBuf::from("ichaos-out"),
            threads: 1,
            shard_size: 10,
            n_pts: 400_000,
            radii: vec![0.025, 0.05, 0.1, 0.2],
            half_side: 0.1,
            area: 0.01,
            aspects: vec![1.0, 4.0, 8.0],
            orders: vec![1, 2],
            depth: 12,
            short_depth: 6,
            probes: 50,
            thresholds: vec![4.0, 6.0],
            levels: vec![4, 5, 6, 7, 8],
            cells: 64,
            moment_orders: 3,
            besov_depth: 8,
            pq: vec![(4.0, f64::INFINITY), (1.0, 1.0)],
            lattice: 4096,
            cells_per_unit: 3200,
            wn_radii: vec![0.01, 0.02, 0.04],
            reference_radius: 0.02,
            a_points: 4_000_000,
            w_cutoff: 16.0,
            model: FieldModel::Lattice,
            modes: 64,
            grid: 256,
            eps: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConfigError {
    Parse { line: usize, message: String },
    Validation { field: String, constraint: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse { line, message } => write!(f, "line {line}: {message}"),
            ConfigError::Validation { field, constraint } => write!(f, "{field}: {constraint}"),
        }
    }
}

fn real(s: &str) -> Result<f64, String> {
    match s {
        "inf" => Ok(f64::INFINITY),
        _ => s.parse::<f64>().map_err(|_| format!("'{s}' is not a real number")).and_then(|x| {
            if x.is_nan() {
                Err("NaN is not allowed".into())
            } else {
                Ok(x)
            }
        }),
    }
}

fn fmt_real(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        format!("{x:?}")
    }
}

fn list<T>(s: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| item(t.trim())).collect()
}

fn int<T: FromStr>(s: &str) -> Result<T, String> {
    s.parse::<T>().map_err(|_| format!("'{s}' is not a nonnegative integer"))
}

fn join<T>(v: &[T], f: impl Fn(&T) -> String) -> String {
    v.iter().map(f).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "experiment" => self.experiment = v.parse()?,
            "beta" => self.beta = real(v)?,
            "replicas" => self.replicas = int(v)?,
            "master_seed" => self.master_seed = int(v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "threads" => self.threads = int(v)?,
            "shard_size" => self.shard_size = int(v)?,
            "n_pts" => self.n_pts = int(v)?,
            "radii" => self.radii = list(v, real)?,
            "half_side" => self.half_side = real(v)?,
            "area" => self.area = real(v)?,
            "aspects" => self.aspects = list(v, real)?,
            "orders" => self.orders = list(v, int)?,
            "depth" => self.depth = int(v)?,
            "short_depth" => self.short_depth = int(v)?,
            "probes" => self.probes = int(v)?,
            "thresholds" => self.thresholds = list(v, real)?,
            "levels" => self.levels = list(v, int)?,
            "cells" => self.cells = int(v)?,
            "moment_orders" => self.moment_orders = int(v)?,
            "besov_depth" => self.besov_depth = int(v)?,
            "pq" => {
                self.pq = list(v, |t| {
                    let (p, q) = t.split_once(':').ok_or_else(|| format!("'{t}' is not p:q"))?;
                    Ok((real(p.trim())?, real(q.trim())?))
                })?
            }
            "lattice" => self.lattice = int(v)?,
            "cells_per_unit" => self.cells_per_unit = int(v)?,
            "wn_radii" => self.wn_radii = list(v, real)?,
            "reference_radius" => self.reference_radius = real(v)?,
            "a_points" => self.a_points = int(v)?,
            "w_cutoff" => self.w_cutoff = real(v)?,
            "model" => self.model = v.parse()?,
            "modes" => self.modes = int(v)?,
            "grid" => self.grid = int(v)?,
            "eps" => self.eps = real(v)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Every key in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("experiment", self.experiment.to_string()),
            ("beta", fmt_real(self.beta)),
            ("replicas", self.replicas.to_string()),
            ("master_seed", self.master_seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("threads", self.threads.to_string()),
            ("shard_size", self.shard_size.to_string()),
            ("n_pts", self.n_pts.to_string()),
            ("radii", join(&self.radii, |x| fmt_real(*x))),
            ("half_side", fmt_real(self.half_side)),
            ("area", fmt_real(self.area)),
            ("aspects", join(&self.aspects, |x| fmt_real(*x))),
            ("orders", join(&self.orders, |x| x.to_string())),
            ("depth", self.depth.to_string()),
            ("short_depth", self.short_depth.to_string()),
            ("probes", self.probes.to_string()),
            ("thresholds", join(&self.thresholds, |x| fmt_real(*x))),
            ("levels", join(&self.levels, |x| x.to_string())),
            ("cells", self.cells.to_string()),
            ("moment_orders", self.moment_orders.to_string()),
            ("besov_depth", self.besov_depth.to_string()),
            ("pq", join(&self.pq, |(p, q)| format!("{}:{}", fmt_real(*p), fmt_real(*q)))),
            ("lattice", self.lattice.to_string()),
            ("cells_per_unit", self.cells_per_unit.to_string()),
            ("wn_radii", join(&self.wn_radii, |x| fmt_real(*x))),
            ("reference_radius", fmt_real(self.reference_radius)),
            ("a_points", self.a_points.to_string()),
            ("w_cutoff", fmt_real(self.w_cutoff)),
            ("model", self.model.to_string()),
            ("modes", self.modes.to_string()),
            ("grid", self.grid.to_string()),
            ("eps", fmt_real(self.eps)),
        ]
    }

    pub fn serialize(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parse and validate, collecting every problem.
    pub fn parse(text: &str) -> Result<Self, Vec<ConfigError>> {
        let cfg = Self::parse_unvalidated(text)?;
        let v = cfg.violations();
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(v)
        }
    }

    /// Syntax and per-key value errors only; range checks are left to [`Self::violations`].
    pub fn parse_unvalidated(text: &str) -> Result<Self, Vec<ConfigError>> {
        let mut cfg = ExperimentConfig::default();
        let mut errors = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errors.push(ConfigError::Parse { line: i + 1, message: "expected 'key = value'".into() });
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                errors.push(ConfigError::Parse { line: i + 1, message: format!("duplicate key '{k}'") });
                continue;
            }
            if let Err(message) = cfg.set(k, v) {
                errors.push(ConfigError::Parse { line: i + 1, message });
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(errors)
        }
    }

    pub fn violations(&self) -> Vec<ConfigError> {
        let mut out = Vec::new();
        let mut bad = |field: &str, ok: bool, constraint: &str| {
            if !ok {
                out.push(ConfigError::Validation { field: field.into(), constraint: constraint.into() });
            }
        };
        let e = self.experiment;
        let b2 = self.beta * self.beta;
        let zero_ok = matches!(e, Experiment::Moments);
        bad(
            "beta",
            self.beta.is_finite() && b2 < 2.0 && (self.beta > 0.0 || (zero_ok && self.beta == 0.0)),
            if zero_ok { "0 <= beta and beta^2 < 2" } else { "0 < beta and beta^2 < 2" },
        );
        bad("threads", self.threads >= 1, "at least 1");
        bad("shard_size", self.shard_size >= 1, "at least 1");
        bad("n_pts", self.n_pts >= 1000, "at least 1000");
        let min_reps = match e {
            Experiment::WhiteNoise => ichaos::whitenoise::MIN_REPLICAS as u64,
            Experiment::Tail => ichaos::tail::MIN_SURVIVAL_SAMPLES as u64,
            Experiment::Besov => 10,
            Experiment::Moments => 2,
            _ => 1,
        };
        bad("replicas", self.replicas >= min_reps, &format!("at least {min_reps} for {e}"));
        bad("radii", self.radii.len() >= 2 && self.radii.iter().all(|&r| r > 0.0 && r < 0.35), "at least two radii in (0, 0.35)");
        bad("half_side", self.half_side > 0.0 && self.half_side <= 0.1, "in (0, 0.1]");
        bad("area", self.area > 0.0 && self.area <= 0.02, "in (0, 0.02]");
        bad(
            "aspects",
            !self.aspects.is_empty() && self.aspects.iter().all(|&a| a >= 1.0 && (self.area * a).sqrt().hypot((self.area / a).sqrt()) < 1.0),
            "ratios >= 1 whose rectangles have diameter below 1",
        );
        bad("orders", !self.orders.is_empty() && self.orders.iter().all(|&n| (1..=4).contains(&n)), "orders N in 1..=4");
        bad("depth", (4..=16).contains(&self.depth), "in 4..=16");
        bad("short_depth", self.short_depth >= 4 && self.short_depth <= self.depth, "in 4..=depth");
        bad("probes", self.probes >= 4, "at least 4");
        bad("thresholds", !self.thresholds.is_empty() && self.thresholds.iter().all(|&a| a >= 0.0 && a.is_finite()), "finite and nonnegative");
        bad(
            "levels",
            self.levels.len() >= 3 && self.levels.iter().all(|&n| (2..=8).contains(&n)),
            "at least three levels in 2..=8 (2048 lattice, delta 0.1)",
        );
        bad("cells", self.cells.is_power_of_two() && (16..=256).contains(&self.cells), "a power of two in 16..=256");
        bad("moment_orders", (3..=5).contains(&self.moment_orders), "in 3..=5");
        bad("besov_depth", (6..=8).contains(&self.besov_depth), "in 6..=8");
        bad(
            "pq",
            !self.pq.is_empty() && self.pq.iter().all(|&(p, q)| p >= 1.0 && q >= 1.0),
            "pairs p:q with p, q >= 1",
        );
        let h = 1.0 / self.cells_per_unit.max(1) as f64;
        let rmax = self.wn_radii.iter().copied().fold(0.0, f64::max);
        bad("cells_per_unit", self.cells_per_unit >= 64 && self.cells_per_unit % 4 == 0, "at least 64 and divisible by 4");
        bad(
            "lattice",
            self.lattice as f64 * h >= 1.0 + 2.0 * (2.0 * rmax / h).ceil() * h && self.lattice as f64 * h >= 1.0,
            "lattice * spacing must cover [0,1]^2 grown by 2 max(wn_radii) and the range 1/2 twice",
        );
        bad(
            "wn_radii",
            self.wn_radii.len() >= 2 && self.wn_radii.iter().all(|&r| r >= 4.0 * h && r <= 0.1) && self.wn_radii.windows(2).all(|w| w[0] < w[1]),
            "at least two increasing radii in [4 spacing, 0.1]",
        );
        bad("reference_radius", self.wn_radii.contains(&self.reference_radius), "one of wn_radii");
        bad("a_points", self.a_points >= 10_000, "at least 10000");
        bad("w_cutoff", self.w_cutoff >= 8.0 && self.w_cutoff.is_finite(), "at least 8");
        bad("modes", (4..=512).contains(&self.modes), "in 4..=512");
        bad("grid", self.grid.is_power_of_two() && (16..=4096).contains(&self.grid), "a power of two in 16..=4096");
        bad("eps", self.eps == 0.0 || (self.eps > 0.0 && self.eps < 0.25), "0 (automatic) or in (0, 1/4)");
        out
    }
}
