use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no annotations")]
    NoAnnotations,

    #[error("unknown class name `{0}`")]
    UnknownClass(String),

    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate document id `{0}`")]
    DuplicateId(String),

    #[error("corpus `{name}` has {size} documents, need at least {needed}")]
    CorpusTooSmall {
        name: String,
        size: usize,
        needed: usize,
    },

    #[error("no labeled documents in corpus `{0}`")]
    NoLabeledDocuments(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("domain index {index} out of range for {num_domains} domains")]
    DomainOutOfRange { index: usize, num_domains: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("reference encoder snapshot missing")]
    MissingReference,

    #[error("class `{0}` has no in-vocabulary lexicon words")]
    EmptyLexiconClass(String),

    #[error("all class supports are zero")]
    ZeroSupport,

    #[error("seed aggregation: {0}")]
    Aggregate(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
