//! Library side of the `twobeam` binary: configuration loading, file
//! formats, and the command implementations. The thin `main` only parses
//! arguments and maps errors to exit codes.

pub mod commands;
pub mod config;
pub mod io;

use thiserror::Error;
use twobeam_core::{FitError, HarnessError, ModelError, SimError, StatsError};

/// Failures are split by exit code: bad input is `Validation` (exit 1),
/// anything that goes wrong while producing output is `Runtime` (exit 2).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl std::fmt::Display) -> Self {
        CliError::Validation(msg.to_string())
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(err: ModelError) -> Self {
        CliError::validation(err)
    }
}

impl From<SimError> for CliError {
    fn from(err: SimError) -> Self {
        CliError::validation(err)
    }
}

impl From<HarnessError> for CliError {
    fn from(err: HarnessError) -> Self {
        CliError::validation(err)
    }
}

impl From<StatsError> for CliError {
    fn from(err: StatsError) -> Self {
        CliError::validation(err)
    }
}

impl From<FitError> for CliError {
    fn from(err: FitError) -> Self {
        match err {
            FitError::DidNotConverge { .. } | FitError::AllModelsFailed { .. } => {
                CliError::runtime(err)
            }
            other => CliError::validation(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::runtime(err)
    }
}
