//! Orchestration for sparse-view reconstruction runs: configuration, the
//! end-to-end pipeline, artifact export and the command implementations.

pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod pipeline;

pub use config::{Method, RunConfig};
pub use error::{CliError, CliResult};
