//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a precondition (non-finite values, bad config, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Array/vector dimensions do not agree.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    /// Diffusion time outside the schedule horizon.
    #[error("time {t} outside schedule range [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },

    /// A forward/sampling pass produced NaN or infinity.
    #[error("non-finite values detected in {0}")]
    NonFinite(String),

    /// Malformed binary or JSON artifact (bad magic, version, manifest, truncation).
    #[error("format error: {0}")]
    Format(String),

    /// Checkpoint was trained for a different task regime than requested.
    #[error("checkpoint/task mismatch: checkpoint is {checkpoint}, requested {requested}")]
    TaskMismatch {
        checkpoint: String,
        requested: String,
    },

    /// Geometrically degenerate input (e.g. collinear joints in alignment).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Training diverged; the last good checkpoint (if any) is preserved.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        got: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
