use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SadlError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entries produced by the {variable} update")]
    NonFiniteUpdate { variable: &'static str },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),

    #[error("cannot split {samples} samples into {clusters} clusters")]
    TooManyClusters { clusters: usize, samples: usize },

    #[error("averaged dictionary row {row} is zero and cannot be normalized")]
    ZeroRow { row: usize },

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("invalid structure block specification: {0}")]
    InvalidBlockSpec(String),

    #[error("label {label} outside 1..={classes}")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("class {class} has too few samples ({count}) to split")]
    ClassTooSmall { class: usize, count: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: bad magic or truncated header")]
    MagicMismatch { path: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("worker {index}: {source}")]
    Worker {
        index: usize,
        #[source]
        source: Box<SadlError>,
    },
}

impl SadlError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SadlError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable name used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            SadlError::DimensionMismatch(_) => "DimensionMismatch",
            SadlError::NonFiniteUpdate { .. } => "NonFiniteUpdate",
            SadlError::SingularSystem(_) => "SingularSystem",
            SadlError::InvalidHyper(_) => "InvalidHyper",
            SadlError::TooManyClusters { .. } => "TooManyClusters",
            SadlError::ZeroRow { .. } => "ZeroRow",
            SadlError::EmptyTestSet => "EmptyTestSet",
            SadlError::InvalidBlockSpec(_) => "InvalidBlockSpec",
            SadlError::LabelOutOfRange { .. } => "LabelOutOfRange",
            SadlError::InvalidDims(_) => "InvalidDims",
            SadlError::ClassTooSmall { .. } => "ClassTooSmall",
            SadlError::InvalidData(_) => "InvalidData",
            SadlError::Parse { .. } => "ParseError",
            SadlError::MagicMismatch { .. } => "MagicMismatch",
            SadlError::Io { .. } => "Io",
            SadlError::Worker { source, .. } => source.kind(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            SadlError::NonFiniteUpdate { .. }
            | SadlError::SingularSystem(_)
            | SadlError::ZeroRow { .. } => true,
            SadlError::Worker { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, SadlError>;
