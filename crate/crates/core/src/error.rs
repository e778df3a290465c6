use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the motion model.
#[derive(Debug, Error)]
pub enum CalmError {
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("dimension mismatch in `{field}`: expected {expected}, got {got}")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("schema error in `{field}`: {reason}")]
    Schema { field: String, reason: String },

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("degenerate attractor: all mixture weights underflow")]
    DegeneratePoint,
}

impl CalmError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        CalmError::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CalmError::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than by the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, CalmError::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, CalmError>;
