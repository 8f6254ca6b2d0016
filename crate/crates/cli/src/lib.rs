//! Experiment runner: TOML config in, `report.json` and `cells.csv` out.
//!
//! ```text
//! plap <subcommand> --config <path> --out <dir> [--workers N] [--seed S]
//! plap validate --config <path> [--for <subcommand>]
//! ```

use std::path::{Path, PathBuf};

use serde::Serialize;

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{load_config, parse_config, LoadedConfig, RunConfig, ValidationReport};
pub use error::CliError;
pub use output::Artifacts;

/// Environment variable that supplies the output directory when `--out` is absent.
pub const OUT_ENV: &str = "PLAP_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    StepCheck,
    Skeleton,
    Simulate,
    LdpC1,
    LdpC2,
    LdpRate,
    RareEvent,
    Tci,
    Refine,
}

impl Subcommand {
    pub const ALL: [Subcommand; 9] = [
        Subcommand::StepCheck,
        Subcommand::Skeleton,
        Subcommand::Simulate,
        Subcommand::LdpC1,
        Subcommand::LdpC2,
        Subcommand::LdpRate,
        Subcommand::RareEvent,
        Subcommand::Tci,
        Subcommand::Refine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::StepCheck => "step-check",
            Subcommand::Skeleton => "skeleton",
            Subcommand::Simulate => "simulate",
            Subcommand::LdpC1 => "ldp-c1",
            Subcommand::LdpC2 => "ldp-c2",
            Subcommand::LdpRate => "ldp-rate",
            Subcommand::RareEvent => "rare-event",
            Subcommand::Tci => "tci",
            Subcommand::Refine => "refine",
        }
    }

    /// Config blocks that must be present.
    pub fn required_blocks(self) -> &'static [&'static str] {
        const MODEL: [&str; 4] = ["grid", "time", "operator", "noise"];
        match self {
            Subcommand::StepCheck => &["grid", "time", "operator"],
            Subcommand::Skeleton | Subcommand::Simulate => &MODEL,
            Subcommand::LdpC1 => &["grid", "time", "operator", "noise", "c1"],
            Subcommand::LdpC2 => &["grid", "time", "operator", "noise", "c2"],
            Subcommand::LdpRate => &["grid", "time", "operator", "noise", "rate"],
            Subcommand::RareEvent => &["grid", "time", "operator", "noise", "rare_event"],
            Subcommand::Tci => &["grid", "time", "operator", "noise", "tci"],
            Subcommand::Refine => &["grid", "time", "operator", "noise", "refine"],
        }
    }
}

/// Runs `sub` inside a pool of `workers` threads. `seed` overrides the config seed.
pub fn execute(sub: Subcommand, config_path: &Path, workers: Option<usize>, seed: Option<u64>) -> Result<Artifacts, CliError> {
    let cfg = load_config(config_path)?;
    let seed = seed.unwrap_or(cfg.config.seed);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    pool.install(|| commands::run(sub, &cfg, seed))
}

/// Validation of a config file, optionally against the needs of one subcommand.
/// Without a subcommand every block present is checked on its own terms.
pub fn validate_file(config_path: &Path, sub: Option<Subcommand>) -> Result<ValidationReport, CliError> {
    let cfg = load_config(config_path)?;
    Ok(match sub {
        Some(s) => cfg.config.validate(s),
        None => {
            let mut merged = ValidationReport::default();
            for s in Subcommand::ALL {
                if s.required_blocks().iter().all(|b| block_present(&cfg.config, b)) {
                    let r = cfg.config.validate(s);
                    for d in r.errors {
                        if !merged.errors.contains(&d) {
                            merged.errors.push(d);
                        }
                    }
                    for d in r.notes {
                        if !merged.notes.contains(&d) {
                            merged.notes.push(d);
                        }
                    }
                }
            }
            if !block_present(&cfg.config, "grid") || !block_present(&cfg.config, "time") || !block_present(&cfg.config, "operator") {
                let r = cfg.config.validate(Subcommand::StepCheck);
                merged.errors.extend(r.errors.into_iter().filter(|d| !merged.errors.contains(d)).collect::<Vec<_>>());
            }
            merged
        }
    })
}

fn block_present(c: &RunConfig, name: &str) -> bool {
    match name {
        "grid" => c.grid.is_some(),
        "time" => c.time.is_some(),
        "operator" => c.operator.is_some(),
        "noise" => c.noise.is_some(),
        "step_check" => c.step_check.is_some(),
        "c1" => c.c1.is_some(),
        "c2" => c.c2.is_some(),
        "rate" => c.rate.is_some(),
        "rare_event" => c.rare_event.is_some(),
        "tci" => c.tci.is_some(),
        "refine" => c.refine.is_some(),
        _ => false,
    }
}

/// `--out` if given, else the environment override.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .ok_or_else(|| CliError::Config(format!("no output directory: pass --out or set {OUT_ENV}")))
}
