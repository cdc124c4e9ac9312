use thiserror::Error;

#[derive(Debug, Error)]
pub enum PklmError {
    #[error("dataset has no rows")]
    EmptyData,
    #[error("row {0} has every cell missing")]
    AllMissingRow(usize),
    #[error("cannot parse record {row}, column {col}: {message}")]
    ParseError {
        row: usize,
        col: usize,
        message: String,
    },
    #[error("record {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("need at least 2 variables, got {0}")]
    DimensionTooSmall(usize),
    #[error("projection yields a single collapsed class")]
    DegenerateLabeling,
    #[error("forest training labels contain a single class")]
    SingleClass,
    #[error("forest training set is empty")]
    EmptyTraining,
    #[error("class {0} has an empty side after coverage filtering")]
    EmptyClassSide(usize),
    #[error("no class contributed a valid term")]
    NoValidClassTerm,
    #[error("no projections to aggregate")]
    NoProjections,
    #[error("no usable projection found within the resampling budget")]
    InsufficientData,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid simulation spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = PklmError> = std::result::Result<T, E>;
