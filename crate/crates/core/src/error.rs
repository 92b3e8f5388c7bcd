use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    Header(String),

    #[error(
        "size mismatch for tensor `{name}`: declared {declared} bytes, shape requires {expected}"
    )]
    SizeMismatch {
        name: String,
        declared: usize,
        expected: usize,
    },

    #[error("tensor `{name}` data range overlaps tensor `{other}`")]
    Overlap { name: String, other: String },

    #[error("tensor `{name}` data range {begin}..{end} exceeds data region of {len} bytes (truncated file?)")]
    Truncated {
        name: String,
        begin: usize,
        end: usize,
        len: usize,
    },

    #[error("unsupported element type `{dtype}` for tensor `{name}`")]
    UnsupportedDtype { name: String, dtype: String },

    #[error("duplicate tensor name `{0}`")]
    NameCollision(String),

    #[error("incompatible tensor `{name}`: {detail}")]
    Incompatible { name: String, detail: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("similarity undefined: {0}")]
    UndefinedSimilarity(String),

    #[error("invalid evaluation data: {0}")]
    Validation(String),

    #[error("merge failed for recipe {recipe}: {source}")]
    MergeFailed {
        recipe: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Evaluator(#[from] crate::eval::EvalError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
