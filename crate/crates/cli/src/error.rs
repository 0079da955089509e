//! Errors of the command-line driver and their exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid or unreadable configuration; exit code 2.
    #[error("configuration error: {0}")]
    Config(String),
    /// A computation failed; exit code 1.
    #[error("computation failed: {0}")]
    Compute(bubble_reduction_core::Error),
    /// Writing outputs failed; exit code 1.
    #[error("output error: {0}")]
    Output(String),
}

impl From<bubble_reduction_core::Error> for CliError {
    fn from(e: bubble_reduction_core::Error) -> Self {
        match e {
            bubble_reduction_core::Error::InvalidParams(msg) => CliError::Config(msg),
            other => CliError::Compute(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) | CliError::Output(_) => 1,
        }
    }
}
