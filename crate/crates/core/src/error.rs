use thiserror::Error;

/// Errors raised while loading data, building specifications, or configuring a search.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("io error: {0}")]
    Io(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing value at row {row}, column {column}")]
    MissingValue { row: usize, column: String },

    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("column not found: {0}")]
    ColumnNotFound(String),

    #[error("duplicate role assignment for column {column}: {detail}")]
    DuplicateRole { column: String, detail: String },

    #[error("duplicate column name: {0}")]
    DuplicateColumn(String),

    #[error("invalid data in column {column}: {message}")]
    InvalidData { column: String, message: String },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("infeasible transformation {transformation} for column {column}")]
    InfeasibleTransformation {
        column: String,
        transformation: String,
    },

    #[error("unknown factor: {0}")]
    UnknownFactor(String),

    #[error("unknown distribution token: {0}")]
    UnknownDistribution(String),

    #[error("unknown transformation token: {0}")]
    UnknownTransformation(String),

    #[error("invalid specification: {0}")]
    InvalidSpecification(String),

    #[error("unsatisfiable constraints: {0}")]
    Unsatisfiable(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
