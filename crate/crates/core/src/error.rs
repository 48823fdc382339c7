use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network shape: {0}")]
    InvalidShape(String),
    #[error("state component {index} = {value} lies outside [0, 1]")]
    Encoding { index: usize, value: f64 },
    #[error("non-finite logit at neuron {index}")]
    NonFinite { index: usize },
    #[error("invalid kernel or window: {0}")]
    InvalidKernel(String),
    #[error("exact differential unavailable: {0}")]
    OracleUnavailable(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid action {action} (action count {count})")]
    InvalidAction { action: usize, count: usize },
    #[error("normalizer calibration failed: {0}")]
    Calibration(String),
    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("IDX format error: {0}")]
    Idx(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
