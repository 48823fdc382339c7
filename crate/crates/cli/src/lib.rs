//! Experiment runner for spiking variational policy gradient: configuration,
//! training orchestration, checkpoints, robustness sweeps, gradient checks
//! and analysis plots.

pub mod app;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("{0}")]
    Usage(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error(transparent)]
    Core(#[from] svpg_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;
