use std::path::PathBuf;

use thiserror::Error;

use crate::scene::ObjectId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("array length mismatch: {0}")]
    ArrayLength(String),

    #[error("NaN in {field} at index {index}")]
    NaN { field: &'static str, index: usize },

    #[error("{field} out of range at index {index}")]
    OutOfRange { field: &'static str, index: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown object ids (scene has {num_objects} objects): {ids:?}")]
    UnknownIds { ids: Vec<ObjectId>, num_objects: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(String),

    #[error("embedder failed on {context}: {message}")]
    Embed { context: String, message: String },

    #[error("image format: {0}")]
    Image(String),

    #[error("missing assets: {}", .0.join(", "))]
    MissingAssets(Vec<String>),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("zip container: {0}")]
    Zip(#[from] zip::result::ZipError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
