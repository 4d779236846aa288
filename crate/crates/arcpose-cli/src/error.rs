//! Process-level error taxonomy: data errors exit with code 2, numerical
//! failures with code 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed, missing, or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),
    /// The computation could not proceed numerically.
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CliError::Numeric(msg.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json: {e}"))
    }
}

pub type Result<T> = core::result::Result<T, CliError>;
