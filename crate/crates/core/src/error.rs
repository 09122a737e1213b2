use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below the normalization threshold")]
    ZeroNorm { norm: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid vector: {0}")]
    InvalidVector(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("pair origin mismatch: {0}")]
    OriginMismatch(&'static str),

    #[error("loss requires at least one positive score")]
    EmptyPositives,

    #[error("negative score list is empty")]
    EmptyNegatives,

    #[error("gallery is empty")]
    EmptyGallery,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient pairs: requested {requested}, available {available}")]
    InsufficientPairs { requested: usize, available: usize },

    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: &'static str, reason: String },

    #[error("non-finite value encountered at step {step}: {what}")]
    NonFinite { step: u64, what: &'static str },

    #[error("checkpoint corrupt ({path}): {reason}")]
    CheckpointCorrupt { path: PathBuf, reason: String },

    #[error("run incomplete: {0}")]
    RunIncomplete(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::CheckpointCorrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit status for the command-line tool: 2 config, 3 data/io, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInvalid { .. } => 2,
            Error::NonFinite { .. } => 4,
            _ => 3,
        }
    }
}
