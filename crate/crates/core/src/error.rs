use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown event label: {0:?}")]
    UnknownLabel(String),
    #[error("legacy label {0:?} needs the scored flag to be disambiguated")]
    MissingDisambiguation(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("llm transport error: {0}")]
    Transport(String),
    #[error("llm response could not be parsed after {attempts} attempts; last response {last:?}")]
    UnparseableResponse { attempts: usize, last: String },
    #[error("bad split spec: {0}")]
    BadSplitSpec(String),
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("token sequence of length {len} exceeds maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("no training data")]
    DataEmpty,
    #[error("loss diverged (non-finite) at epoch {epoch}, step {step}")]
    DivergedLoss { epoch: usize, step: usize },
    #[error("foul recognition needs at least one view")]
    EmptyViews,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("corpus too small: CIDEr-D needs at least 2 items, got {0}")]
    CorpusTooSmall(usize),
    #[error("validation history is empty")]
    EmptyHistory,
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
