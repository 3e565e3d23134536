//! Error type shared by every module of the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or precondition on user-supplied parameters.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// A non-finite value appeared where only finite values are allowed.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    /// Input data failed validation (bad shares, bad prices, missing columns).
    #[error("data validation failed: {0}")]
    Validation(String),

    /// The estimator cannot represent the requested market structure.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("undefined elasticity for product {j} w.r.t. price {k}: {reason}")]
    UndefinedElasticity { j: usize, k: usize, reason: String },

    #[error("rank-deficient design: column {column} ({name}) is collinear with earlier columns")]
    RankDeficient { column: usize, name: String },

    #[error("share inversion failed in market {market}: outside share {outside_share}")]
    Inversion { market: u64, outside_share: f64 },

    #[error("fold plan error: {0}")]
    Plan(String),

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context: context.into(),
            expected,
            actual,
        }
    }
}
