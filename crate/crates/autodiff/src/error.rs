use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unknown parameter slot `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter slot `{0}`")]
    DuplicateParameter(String),
    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFinite { op: &'static str, node: usize },
    #[error("gradient root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
