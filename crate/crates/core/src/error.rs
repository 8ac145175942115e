use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed annotation {id}: {reason}")]
    MalformedAnnotation { id: u64, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("shape spec out of bounds: {0}")]
    SpecOutOfBounds(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dataset load error (image {image_id}): {reason}")]
    Load { image_id: u64, reason: String },

    #[error("dataset validation error (annotation {annotation_id}): {reason}")]
    Validation { annotation_id: u64, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at iteration {iteration} (checkpoint dumped to {dump:?})")]
    NonFiniteLoss {
        iteration: u64,
        dump: Option<PathBuf>,
    },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("io error at {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
