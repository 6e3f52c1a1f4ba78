use thiserror::Error;

/// Errors shared across the whole stack.
#[derive(Error, Debug)]
pub enum Error {
    /// Tensor extents do not line up (matmul inner dims, broadcast, pooling divisibility).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A precondition on an argument failed (out-of-range index, bad hyperparameter, ...).
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Tape misuse: objective not scalar, leaf not on the active tape, mixed tapes.
    #[error("tape error: {0}")]
    Tape(String),

    /// NaN or infinity showed up where finite data is required.
    #[error("non-finite values in {0}")]
    NonFinite(String),

    /// A config document failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed on-disk data (PGM/TNSR headers, truncated payloads, bad manifests).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that indicate bad user input rather than a runtime failure.
    /// The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_) | Error::Config(_) | Error::Shape(_) | Error::Format(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
