use std::path::PathBuf;

use macect::mace::ConvergenceLog;
use thiserror::Error;

/// Failures of a CLI command, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, unreadable or malformed input, incompatible shapes.
    #[error("{0}")]
    Config(String),

    /// The reconstruction itself failed; `log` points at the saved residual history.
    #[error("{message}")]
    Numerical { message: String, log: Option<PathBuf> },

    /// The consensus iteration diverged; carries the residual history so far.
    #[error("{message}")]
    Diverged { message: String, log: Box<ConvergenceLog> },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Process exit code: 2 for configuration or input errors, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } | CliError::Diverged { .. } => 3,
        }
    }
}

impl From<macect::Error> for CliError {
    fn from(e: macect::Error) -> Self {
        if let macect::Error::Diverged { iteration, residual, log } = e {
            return CliError::Diverged {
                message: format!("consensus iteration diverged at iteration {iteration} (residual {residual:.4e})"),
                log,
            };
        }
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical {
                message: e.to_string(),
                log: None,
            }
        }
    }
}
