//! Experiment orchestration: configuration, multi-seed runs with periodic
//! exploration-free evaluation, on-disk artifacts, comparison reports and
//! the command-line entry point.
//!
//! Each (algorithm, seed) run writes into `<output_dir>/<algo>_seed<seed>/`:
//!
//! * `curves.csv`: one row per training episode and agent (profit, episode
//!   mean, discounted return, optimiser diagnostics)
//! * `evals.csv`: one row per evaluation point (episode 0 baseline, then
//!   every `eval_interval` episodes): mean, std, per-agent profit
//! * `traces/eval_<episode>.csv`: per-step prices, shares, demand and reward
//!   of every evaluation rollout
//! * `checkpoints/ep_<episode>.json`: network parameters
//! * `manifest.json`: schema version, config hash, seed, resolved settings

mod cli;
mod compare;
mod config;
mod run;

pub use cli::cli_main;
pub use compare::{compare, discover_runs, load_run, read_evals, write_comparison, Comparison, EvalRow, RunData};
pub use config::{ExperimentConfig, MarketOverrides, BUNDLED_DEMAND_MODEL};
pub use run::{
    eval_seeds, evaluate_policy, load_run_learner, run_dir_name, run_experiment, run_single, EvalSummary, Manifest,
    RunSpec, RunSummary, SCHEMA_VERSION,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::algos::AlgoError;
use crate::calibration::CalibrationError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("cannot parse config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("corrupt run artifact {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Algo(#[from] AlgoError),
}
