//! Experiment runner for the stable CIR estimators: simulation, estimation,
//! Monte Carlo replication, diagnostics and the invariant check suite.

use std::fmt::Display;
use std::path::Path;

pub mod check;
pub mod commands;
pub mod config;
pub mod mc;

pub use config::{ExperimentConfig, Mode};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("check suite failed: {0}")]
    CheckFailed(String),
}

impl HarnessError {
    pub fn io(path: &Path, err: impl Display) -> Self {
        HarnessError::Io(format!("{}: {err}", path.display()))
    }

    /// Process exit status: 1 for configuration and I/O problems, 2 for
    /// numerical failures, 3 when the check suite reports a failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io(_) => 1,
            HarnessError::Numerical(_) => 2,
            HarnessError::CheckFailed(_) => 3,
        }
    }
}
