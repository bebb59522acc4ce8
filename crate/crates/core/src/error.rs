use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("order is not determined: {0}")]
    Indeterminate(String),
    #[error("decision-tree extraction failed on permutation {perm:?}: {reason}")]
    Extraction { perm: Vec<usize>, reason: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training aborted: {0}")]
    NonFinite(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
