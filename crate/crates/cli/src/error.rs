use std::path::PathBuf;

use thiserror::Error;

/// Failures of a `cbfsim` command, each mapped to a fixed exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// A check (gradient verification) did not meet its tolerance.
    #[error("check failed: {0}")]
    Check(String),
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("simulation failed: {0}")]
    Simulation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config { .. } | CliError::Argument(_) | CliError::Io { .. } => 2,
            CliError::Simulation(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
