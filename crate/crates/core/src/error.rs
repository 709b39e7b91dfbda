use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes, invalid parameters or incompatible geometry.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// An agent failed while being applied inside the consensus loop.
    #[error("agent `{name}` failed: {message}")]
    Agent { name: String, message: String },

    /// The consensus iteration blew up; carries the residual history.
    #[error("iteration diverged at iteration {iteration} (residual {residual:.4e})")]
    Diverged {
        iteration: usize,
        residual: f64,
        log: Box<crate::mace::ConvergenceLog>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Io { .. } | Error::Json { .. })
    }
}
