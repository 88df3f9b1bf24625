use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use ichaos_cli::config::{ConfigError, Experiment, ExperimentConfig};
use ichaos_cli::run;

/// Verification campaigns for imaginary multiplicative chaos.
#[derive(Parser, Debug)]
#[command(name = "ichaos", version)]
struct Cli {
    /// One of: moments, scaling, lil, fastpoints, tail, besov, whitenoise, constant-a, sample-field
    campaign: String,
    /// Plain-text `key = value` configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to ICHAOS_THREADS, then `threads`.
    #[arg(long)]
    threads: Option<usize>,
    /// Reuse intact replica shards in the output directory.
    #[arg(long)]
    resume: bool,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fail(errors: &[ConfigError]) -> ExitCode {
    for e in errors {
        eprintln!("config error: {e}");
    }
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let experiment: Experiment = match cli.campaign.parse() {
        Ok(e) => e,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    let text = match &cli.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read {}: {e}", p.display());
                return ExitCode::from(1);
            }
        },
        None => String::new(),
    };
    // range checks wait until the campaign and overrides are applied
    let mut cfg = match ExperimentConfig::parse_unvalidated(&text) {
        Ok(c) => c,
        Err(errs) => return fail(&errs),
    };
    let explicit = text.lines().any(|l| l.split('#').next().unwrap_or("").split('=').next().map(str::trim) == Some("experiment"));
    if explicit && cfg.experiment != experiment {
        eprintln!("config names experiment '{}' but the command line asks for '{experiment}'", cfg.experiment);
        return ExitCode::from(1);
    }
    cfg.experiment = experiment;
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    let env_threads = std::env::var("ICHAOS_THREADS").ok().and_then(|v| v.parse().ok());
    cfg.threads = cli.threads.or(env_threads).unwrap_or(cfg.threads);
    let v = cfg.violations();
    if !v.is_empty() {
        return fail(&v);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run::run(&cfg, cli.resume, cfg.threads)) {
        Ok(o) => {
            for c in &o.checks {
                println!("{} {} = {} (target {})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.target);
            }
            println!("report: {}", o.report.display());
            if o.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
