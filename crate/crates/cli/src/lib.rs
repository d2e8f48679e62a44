//! Sweep orchestration and CSV emission for the `qrkey` binary.

pub mod config;
pub mod output;
pub mod region;
pub mod sweep;
pub mod validate;

use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<qrkey::Error> for CliError {
    fn from(e: qrkey::Error) -> Self {
        match e {
            qrkey::Error::Parameter(_) | qrkey::Error::Unsupported(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

/// Slack on probabilities and fractions before a value is treated as a
/// sign of a non-physical state.
pub const PROB_TOL: f64 = 1e-9;

pub(crate) fn check_probability(what: &str, v: f64) -> Result<(), CliError> {
    if !v.is_finite() || v < -PROB_TOL || v > 1.0 + PROB_TOL {
        return Err(CliError::Numerical(format!("{what} = {v} is not a probability")));
    }
    Ok(())
}
