//! Command-line experiment runner.
//!
//! ```text
//! adaptive-play solve    [CONFIG] [--seed N] [--steps N] [--out DIR] [--set key=value]...
//! adaptive-play simulate [CONFIG] ...
//! adaptive-play check    [CONFIG] ...
//! adaptive-play plot     DIR
//! ```
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 parse or schema,
//! 4 numerical, 5 input/output.

pub mod check;
pub mod config;
pub mod model;
pub mod plot;
pub mod simulate;
pub mod solve;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Parse(_) => "parse",
            CliError::Schema(_) => "schema",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Parse(_) | CliError::Schema(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<adaptive_play::Error> for CliError {
    fn from(e: adaptive_play::Error) -> Self {
        use adaptive_play::Error as E;
        match e {
            E::Parse { .. } => CliError::Parse(e.to_string()),
            E::Io(_) => CliError::Io(e.to_string()),
            E::InvalidArgument(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "adaptive-play", version, about = "Adaptive logit learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rest points, spectra and stability conditions.
    Solve(RunArgs),
    /// Seeded batch of trajectories with per-seed CSVs and a summary.
    Simulate(RunArgs),
    /// Convergence conditions only.
    Check(RunArgs),
    /// Gnuplot scripts for a simulation output directory.
    Plot {
        dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Key-value config file; without it only --set keys are used.
    pub config: Option<PathBuf>,
    /// Run this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override a config key, e.g. --set beta=0.4
    #[arg(long = "set", value_parser = parse_kv)]
    pub set: Vec<(String, String)>,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got '{s}'"))
}

impl RunArgs {
    pub fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut overrides = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(("seeds".into(), seed.to_string()));
        }
        if let Some(steps) = self.steps {
            overrides.push(("steps".into(), steps.to_string()));
        }
        if let Some(out) = &self.out {
            let cwd = std::env::current_dir().map_err(|e| CliError::Io(e.to_string()))?;
            overrides.push(("out".into(), cwd.join(out).display().to_string()));
        }
        match &self.config {
            Some(p) => ExperimentConfig::load(p, &overrides),
            None => ExperimentConfig::build(None, std::path::Path::new("."), &overrides),
        }
    }
}

/// Runs a parsed command, writing reports to `out` and warnings to `err`.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    match &cli.command {
        Command::Solve(a) => write!(out, "{}", solve::solve(&a.load()?)?).map_err(io),
        Command::Check(a) => write!(out, "{}", check::check(&a.load()?)?).map_err(io),
        Command::Simulate(a) => {
            let cfg = a.load()?;
            let o = simulate::simulate(&cfg)?;
            for w in &o.warnings {
                writeln!(err, "warning: {w}").map_err(io)?;
            }
            write!(out, "{}", o.report(&cfg)).map_err(io)
        }
        Command::Plot { dir } => {
            let o = plot::plot(dir)?;
            for w in &o.warnings {
                writeln!(err, "warning: {w}").map_err(io)?;
            }
            for f in &o.files {
                writeln!(out, "wrote {}", f.display()).map_err(io)?;
            }
            Ok(())
        }
    }
}
