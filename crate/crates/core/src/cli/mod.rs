//! Command-line surface: data generation, self-training runs and reports.

mod commands;
mod config;
mod rundir;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::run;
pub use config::{DataConfig, Experiment, RunConfig};
pub use rundir::{Manifest, RunLock, LOCK_FILE, MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "seqpl",
    version,
    about = "Uncertainty-aware pseudo-labeling for sequence recognition"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic experiment: labeled/unlabeled pools, validation and test sets.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Supervised round 0 followed by pseudo-labeling rounds.
    SelfTrain {
        /// Directory written by `gen-data`.
        #[arg(long)]
        data: PathBuf,
        /// New run directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Word accuracy, WER and CER of a checkpoint on a labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam_width: usize,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prediction rejection curves and PRR.
    Rejection {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = MeasureArg::Both)]
        measure: MeasureArg,
        /// Output directory for curve tables and prr.json.
        #[arg(long)]
        out: PathBuf,
        /// Also render the curves as SVG.
        #[arg(long)]
        svg: bool,
        #[command(flatten)]
        scoring: ScoringArgs,
        /// One score per line in dataset order, ranked like an uncertainty.
        #[arg(long, hide = true)]
        scores: Option<PathBuf>,
    },
    /// ECE over a dropout-rate grid, with ECE of lowest-uncertainty subsets.
    Calibrate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.05, 0.1, 0.2, 0.3])]
        p_grid: Vec<f64>,
        /// Fractions of lowest-uncertainty samples to report subset ECE for.
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 1.0])]
        subsets: Vec<f64>,
        #[arg(long, default_value_t = crate::diagnostics::DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Selected count and pseudo-label accuracy across thresholds.
    TauSweep {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labeled dataset, e.g. `unlabeled_oracle.jsonl` from `gen-data`.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, f64::INFINITY])]
        taus: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    Uncertainty,
    Confidence,
    Both,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "SEQPL_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub label_fraction: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    #[arg(long)]
    pub ensembles: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub rounds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoringArgs {
    #[arg(long, default_value_t = 5)]
    pub beam_width: usize,
    #[arg(long, default_value_t = 5)]
    pub ensembles: usize,
    #[arg(long, default_value_t = 0.01)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    /// Seed of the ensemble masks.
    #[arg(long, env = "SEQPL_SEED", default_value_t = 0)]
    pub seed: u64,
}
