//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor had the wrong shape for the requested operation.
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A configuration value failed validation before any work started.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A class label was outside `0..num_classes`.
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    /// An operation received an empty collection it cannot work with.
    #[error("empty input: {0}")]
    Empty(String),

    /// A computation produced a non-finite value or otherwise diverged.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// A serialized artifact was malformed.
    #[error("corrupt artifact: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that indicate bad user input rather than a failure at
    /// run time. The command-line tool maps these to a distinct exit code.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::ShapeMismatch { .. }
                | Error::LabelOutOfRange { .. }
                | Error::Empty(_)
        )
    }
}
