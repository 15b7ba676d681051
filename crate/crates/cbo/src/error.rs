//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CboError>;

#[derive(Debug, Error)]
pub enum CboError {
    /// A parameter or data structure violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A text file failed to parse; names the offending line and field.
    #[error("{path}:{line}: {field}: {message}")]
    Parse {
        path: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("unknown resolution {0:?}")]
    UnknownResolution(String),

    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),

    /// Exhaustive enumeration refused: the assignment space is too big.
    #[error("instance too large: {size} assignments exceeds limit {limit}")]
    InstanceTooLarge { size: u128, limit: u128 },

    #[error("buffer not sorted by non-increasing confidence")]
    UnsortedBuffer,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CboError {
    pub fn invalid(msg: impl Into<String>) -> CboError {
        CboError::InvalidInput(msg.into())
    }
}
