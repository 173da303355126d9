//! Library side of the `polydecay` command-line tool: configuration,
//! subcommand drivers and file output.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error,
//! 3 numerical-diagnostic failure.

pub mod commands;
pub mod config;
pub mod output;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<polydecay::Error> for CliError {
    fn from(e: polydecay::Error) -> Self {
        use polydecay::Error as E;
        match e {
            E::InvalidParameter { .. } | E::DimensionMismatch { .. } | E::SchemeMismatch(_) => {
                CliError::Config(e.to_string())
            }
            E::NonFinite(_) | E::NoConvergence { .. } | E::UndefinedRatio(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
