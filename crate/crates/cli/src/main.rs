//! `anchormix`: anchor selection, anchored Gibbs fits, identifiability
//! diagnostics, the ELPPD simulation and accelerometer feature extraction.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or config,
//! 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl From<anchormix::Error> for CliError {
    fn from(e: anchormix::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else if matches!(e, anchormix::Error::Io(_)) {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "anchormix", version, about = "Anchored Bayesian Gaussian mixture models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (overrides the config `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Choose anchor points; writes anchors.json and diagnostics.json.
    SelectAnchors,
    /// Anchored Gibbs fit; writes draws.csv and summary.json.
    Fit,
    /// ELPPD simulation over the number of anchors; writes sim_results.csv
    /// and sim_summary.json.
    Simulate,
    /// SMV features from trial files or directories; writes features.csv.
    ExtractFeatures {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Relabeling diagnostics for an anchor model.
    Diagnose {
        /// Use the posterior mean of these draws as gamma0.
        #[arg(long)]
        draws: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Validation("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone());
    let out_dir = || out.clone().unwrap_or_else(|| PathBuf::from("anchormix-out"));
    match &cli.command {
        Command::SelectAnchors => commands::select_anchors(&cfg, &out_dir()),
        Command::Fit => commands::fit(&cfg, &out_dir()),
        Command::Simulate => commands::simulate(&cfg, &out_dir()),
        Command::ExtractFeatures { paths } => commands::extract(&cfg, out.as_deref(), paths),
        Command::Diagnose { draws } => commands::diagnose(&cfg, &out_dir(), draws.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
