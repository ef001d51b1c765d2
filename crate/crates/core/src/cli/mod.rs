//! Command-line front end. Every command resolves a [`LabConfig`] from an
//! optional TOML file plus `--set key=value` overrides, logs the seed and
//! config digest, and writes `report.toml` (plus CSV tables and SVG plots)
//! under `--out`. Wall-clock durations go to `timing.toml` so reports of
//! identical runs compare equal byte for byte.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{apply_override, AttackSection, BenchSection, DetectorSection, LabConfig};

#[derive(Debug, Parser)]
#[command(name = "cpguard", version, about = "Collaborative-perception attack and defense lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Args)]
pub struct Common {
    /// TOML config file; all sections are optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `seed` from the config file.
    #[arg(long, env = "CPGUARD_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Config override such as `guard.alpha=0.0`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the toy detector on simulated frames.
    TrainDetector {
        #[command(flatten)]
        common: Common,
    },
    /// Generate the labeled benchmark dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detector: PathBuf,
    },
    /// Print and record the dataset distributions.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the guard on a dataset's training split.
    TrainGuard {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Sweep attacks and budgets against the undefended detector.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detector: PathBuf,
    },
    /// Guard classification metrics and attacked/defended detection AP.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        guard: PathBuf,
        /// Dataset whose test split is classified.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Throughput of detect+defend against the consensus baseline.
    BenchFps {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        guard: PathBuf,
    },
    /// Train without each attack type and test on it.
    LeaveOneOut {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status; diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
