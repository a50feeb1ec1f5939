use std::process::ExitCode;

use thiserror::Error;

/// Failures mapped onto the documented exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 1.
    #[error("{0}")]
    Runtime(String),
    /// Exit 2: bad flags, files or values.
    #[error("{0}")]
    Config(String),
    /// Exit 3: a listen endpoint could not be bound.
    #[error("{0}")]
    Bind(String),
    /// Exit 4: a scenario assertion or deadline failed.
    #[error("{0}")]
    Assertion(String),
    /// Exit 5: the dataset directory is missing or empty.
    #[error("{0}")]
    MissingDataset(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Bind(_) => 3,
            CliError::Assertion(_) => 4,
            CliError::MissingDataset(_) => 5,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}
