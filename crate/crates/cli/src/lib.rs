//! Experiment runner for `fedaq`: config files, single runs, energy
//! comparisons and range traces.

use std::path::Path;

pub mod commands;
pub mod config;
pub mod report;
pub mod trend;

pub use config::{ConfigError, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Run(#[from] fedaq::Error),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn csv(path: &Path, e: csv::Error) -> Self {
        Self::io(path, e)
    }

    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Run(_) | CliError::Io { .. } => 1,
        }
    }
}
