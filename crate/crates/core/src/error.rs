use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a precondition (shape, range, orthonormality, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Gram-Schmidt could not build a frame from a 6D rotation.
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("schema error in record {record}, field `{field}`: {message}")]
    Schema {
        record: usize,
        field: String,
        message: String,
    },

    /// Non-finite loss, gradient, or a failed decomposition.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("classifier is frozen")]
    Frozen,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// `true` for errors that indicate bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::DegenerateRotation(_)
                | Error::Dimension { .. }
                | Error::Schema { .. }
                | Error::Frozen
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
