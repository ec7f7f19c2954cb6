//! Error type shared by every module.

use thiserror::Error;

/// Failure modes surfaced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter failed validation. `field` names the offending input.
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    /// A numerical regime assumption does not hold for the given inputs.
    #[error("regime violated: {0}")]
    Regime(String),

    /// A computation would exceed its configured budget.
    #[error("budget exceeded: {0}")]
    Budget(String),

    /// The endpoint cannot be reached by any admissible path.
    #[error("empty path set from {from:?} to {to:?}")]
    EmptyPathSet { from: (i64, i64), to: (i64, i64) },

    /// A numerical routine failed in a way that should be impossible.
    #[error("internal numerical failure: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
