use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("index {index} out of range for {len} classes")]
    Index { index: usize, len: usize },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("manifest has no entries")]
    EmptyManifest,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing class in training data: {0}")]
    MissingClass(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },
    #[error("label {label} out of range for {n} classes")]
    LabelRange { label: usize, n: usize },
    #[error("confusion matrix has no samples")]
    EmptyMatrix,
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
