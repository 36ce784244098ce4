use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}: {message}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("unknown class label {0:?}")]
    UnknownLabel(String),

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("class {class} has {count} samples, fewer than the {k} folds requested")]
    TooFewSamples {
        class: String,
        count: usize,
        k: usize,
    },

    #[error("class weight undefined: class {0} has zero samples")]
    ZeroCount(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown backbone {0:?}")]
    UnknownBackbone(String),

    #[error("backward called without cached forward state")]
    MissingCache,

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("invalid prediction vector: {0}")]
    InvalidPrediction(String),

    #[error("cannot fuse an empty set of prediction vectors")]
    EmptyFusion,

    #[error("sample {sample:?} is missing leaf (arch={arch}, size={size}, fold={fold})")]
    MissingLeaf {
        sample: String,
        arch: String,
        size: u32,
        fold: usize,
    },

    #[error("sample {0:?} has no predictions")]
    UnknownSample(String),

    #[error("prediction and truth keys differ: {0}")]
    KeyMismatch(String),

    #[error("metrics undefined for an empty confusion matrix")]
    EmptyMatrix,

    #[error("empty training split for fold {0}")]
    EmptyTrainingSplit(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
