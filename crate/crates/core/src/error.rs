use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at row {row}, field `{field}`: {message}")]
    Validation {
        row: usize,
        field: String,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("feature `{0}` has no non-missing training values")]
    FullyMissingFeature(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("training data contains a single class; both outcomes are required")]
    SingleClass,

    #[error("logistic regression diverged (non-finite loss) with learning rate {learning_rate}")]
    Diverged { learning_rate: f64 },

    #[error("observed information matrix is singular; check for collinear or separating features")]
    SingularInformation,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model artifact is corrupt: {0}")]
    Corrupt(String),

    #[error("unsupported model artifact version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
