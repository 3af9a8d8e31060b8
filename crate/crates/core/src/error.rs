use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("backward target is not a scalar ({0} elements)")]
    NotScalar(usize),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("sequence length {got} exceeds max_positions {max}")]
    TooLong { got: usize, max: usize },
    #[error("missing modality: {0}")]
    MissingModality(String),
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("id mismatch: {0}")]
    IdMismatch(String),
    #[error("non-finite value produced by `{0}`")]
    NonFinite(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
