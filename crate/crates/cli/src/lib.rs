//! Batch runner for the canomap library: scenario configuration, checks and
//! artifact output.

pub mod config;
pub mod output;
pub mod runner;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<canomap::Error> for CliError {
    fn from(e: canomap::Error) -> Self {
        match e {
            canomap::Error::InvalidArgument(m) => CliError::Config(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
