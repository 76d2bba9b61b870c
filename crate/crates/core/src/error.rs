use std::path::PathBuf;

use crate::types::LabelId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),
    #[error("distribution has empty support")]
    EmptyDistribution,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("exemplar store is empty")]
    EmptyStore,
    #[error("label {0} has no text embedding")]
    MissingTextEmbedding(LabelId),
    #[error("unknown label {0}")]
    UnknownLabel(LabelId),
    #[error("cluster tree is empty")]
    EmptyTree,
    #[error("leaf {0} has not been trained since its last update")]
    UntrainedLeaf(usize),
    #[error("model has not been trained on its current exemplars")]
    NotTrained,
    #[error("training leaf {leaf} failed: {source}")]
    LeafTraining {
        leaf: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("covered label set is empty while coverage weight is {0}")]
    EmptyCoveredSet(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid scenario plan: {0}")]
    InvalidPlan(String),
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("manifest {path}: label id {label} is not declared")]
    DanglingLabel { path: PathBuf, label: u32 },
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("malformed report: {0}")]
    MalformedReport(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
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

    /// True for errors caused by the content of input data rather than by
    /// how the run was configured.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::DanglingLabel { .. }
                | Error::Manifest { .. }
                | Error::Io { .. }
                | Error::Json(_)
                | Error::MalformedReport(_)
                | Error::DimensionMismatch { .. }
                | Error::NonFinite(_)
                | Error::UnknownLabel(_)
                | Error::MissingTextEmbedding(_)
        )
    }
}
