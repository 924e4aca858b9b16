use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("riccati integration diverged at t = {time}")]
    RiccatiDivergence { time: f64 },

    #[error("ensemble diverged at step {step}")]
    EnsembleDivergence { step: u64 },

    #[error("grid index {index} outside [0, {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
