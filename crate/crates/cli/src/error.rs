use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed input data, configuration or arguments.
    #[error("input error: {0}")]
    Input(String),
    /// The run finished and wrote its files, but no usable converged result.
    #[error("{0}")]
    NotConverged(String),
    /// Writing outputs failed.
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Input(_) => ExitCode::from(3),
            CliError::NotConverged(_) => ExitCode::from(2),
            CliError::Output(_) => ExitCode::from(1),
        }
    }
}

impl From<lcga::LcgaError> for CliError {
    fn from(e: lcga::LcgaError) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
