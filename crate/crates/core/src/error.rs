use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("observation has no coordinates")]
    EmptyObservation,
    #[error("coordinate {index} of the observation is not finite")]
    NonFinite { index: usize },
    #[error("observation has dimension {found}, stream dimension is {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("e-predictor needs a sequence of length at least one")]
    EmptySequence,
    #[error("e-value {0} is negative or not finite")]
    InvalidEValue(f64),
    #[error("e-value {value} at position {index} is not positive")]
    NonPositiveEValue { index: usize, value: f64 },
    #[error("score function returned {0}, scores must be finite and nonnegative")]
    InvalidScore(f64),
    #[error("threshold must be a finite number greater than 1, got {0}")]
    InvalidThreshold(f64),
    #[error("neighbour count k must be at least 1")]
    InvalidK,
    #[error("window capacity must be at least 1")]
    InvalidWindow,
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
