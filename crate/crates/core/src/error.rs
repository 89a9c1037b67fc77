use thiserror::Error;

/// Errors raised by the optimization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),

    #[error("objective vector contains NaN")]
    NanObjective,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid sample count {count}: {reason}")]
    InvalidSampleCount { count: usize, reason: String },

    #[error("not enough training data: {have} usable records, need at least {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("expression error at offset {offset}: {message}")]
    Expression { offset: usize, message: String },

    #[error("unknown problem `{name}`; valid names: {valid}")]
    UnknownProblem { name: String, valid: String },

    #[error("surrogate training failed: {0}")]
    Training(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
