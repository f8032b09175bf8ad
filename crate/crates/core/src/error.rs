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

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    UnparseableCell {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("row {row}: unknown label {label:?}")]
    UnknownLabel { row: usize, label: String },

    #[error("label column {0:?} not found")]
    MissingLabelColumn(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("split needs {requested} rows but the dataset has {available}")]
    SplitTooLarge { requested: usize, available: usize },

    #[error("requested {requested} rows from the other classes but only {available} exist")]
    SubsampleTooLarge { requested: usize, available: usize },

    #[error("class {0} does not occur in the dataset")]
    ClassAbsent(usize),

    #[error("labels must be binary (classes 1 and 2), found k = {0}")]
    NonBinaryLabels(usize),

    #[error("class {class} has {count} training rows, at least 2 are required")]
    ClassTooSmall { class: usize, count: usize },

    #[error("covariance of component {component} is not positive definite")]
    NotPositiveDefinite { component: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("length mismatch: {left} scores vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("true labels must be in 1..={k}, row {row} has {label}")]
    InvalidTruth { row: usize, label: usize, k: usize },

    #[error("score row {0} has no finite entry")]
    NoFiniteScore(usize),

    #[error("score row {row} contains an invalid value {value}")]
    InvalidScore { row: usize, value: f64 },

    #[error("at least two classes are required, got {0}")]
    TooFewClasses(usize),

    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),

    #[error("threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
