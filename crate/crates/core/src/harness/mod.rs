//! Experiment orchestration: configs, runs, reports, sweeps and comparisons.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod report;
pub mod run;
pub mod sweep;

pub use compare::{compare, Comparison, RunSummary};
pub use config::{ClipSpec, DataSpec, ExperimentConfig, ModelSpec};
pub use report::{LimitSource, NoiseSpec, PrivacyReport};
pub use run::{account_run, read_metrics, read_participation, run, run_dir, MetricsRow, RunOutcome};
pub use sweep::{parse_grid, sweep_privacy};

use std::path::{Path, PathBuf};

use crate::accountant::AccountantError;
use crate::clip::ClipError;
use crate::federation::FederationError;
use crate::secagg::SecAggError;
use crate::tree::TreeError;
use crate::vector::VectorError;

/// Environment variable naming the directory that holds run directories.
pub const OUTPUT_ROOT_ENV: &str = "FPSIM_OUTPUT_ROOT";

/// `$FPSIM_OUTPUT_ROOT`, or `runs` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error in `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("compare: {0}")]
    Compare(String),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
    #[error(transparent)]
    SecAgg(#[from] SecAggError),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}
