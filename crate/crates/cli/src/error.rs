use std::process::ExitCode;

use thiserror::Error;

/// Failures of a command, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed input, bad flags. Exit 2.
    #[error("{0}")]
    Input(String),
    /// Data without the variation a test needs. Exit 3.
    #[error("{0}")]
    Degenerate(String),
    /// Numerical breakdown inside the library. Exit 4.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Input(_) => 2,
            CliError::Degenerate(_) => 3,
            CliError::Numerical(_) => 4,
        })
    }
}

impl From<elastic_changepoint::error::Error> for CliError {
    fn from(e: elastic_changepoint::error::Error) -> Self {
        use elastic_changepoint::error::Error as E;
        match e {
            E::InvalidInput(_) => CliError::Input(e.to_string()),
            E::DegenerateData(_) | E::DegenerateGeometry(_) => CliError::Degenerate(e.to_string()),
            E::Numerical(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(format!("csv error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("json error: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
