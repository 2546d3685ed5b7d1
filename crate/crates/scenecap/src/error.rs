use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dim(String),
    /// An operation was called outside its contract (e.g. backward on a
    /// non-scalar output).
    #[error("contract violation: {0}")]
    Contract(String),
    /// NaN or Inf appeared in an operation result.
    #[error("non-finite value produced by `{0}`")]
    NonFinite(&'static str),
    /// Malformed or inconsistent input data (corpus, graphs, eval files).
    #[error("data error: {0}")]
    Data(String),
    /// Bad configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Model/checkpoint incompatibility.
    #[error("model error: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
