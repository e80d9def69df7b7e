//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Structural misuse: mismatched dimensions, misaligned sequences.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// A value left the finite range during numerical work.
    #[error("numerical divergence in {0}")]
    Numerical(String),

    /// Invalid configuration or parameter values.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Domain validation failure (ranges, physical plausibility).
    #[error("validation failed: {0}")]
    Validation(String),

    /// Checkpoint file problems (magic, version, truncation).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }
}
