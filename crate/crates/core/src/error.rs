use std::path::PathBuf;

/// Errors produced anywhere in the segmentation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("input is empty")]
    EmptyInput,

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no admissible segmentation connects the first and last cut")]
    NoSegmentationPath,

    #[error("unknown component {id}; available ids: {available:?}")]
    UnknownComponent { id: usize, available: Vec<usize> },

    #[error("malformed document: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Self::InvalidParameter(message.into())
    }

    /// True when the error stems from reading or parsing inputs rather than
    /// from the numerical work itself.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Self::Io { .. }
                | Self::Parse { .. }
                | Self::EmptyInput
                | Self::Schema(_)
                | Self::Format(_)
                | Self::UnknownComponent { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
