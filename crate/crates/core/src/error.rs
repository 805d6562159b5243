use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("decode error at byte {offset}: {msg}")]
    Decode { offset: usize, msg: String },
    #[error("rect {rect:?} outside {width}x{height} image")]
    Bounds { rect: (usize, usize, usize, usize), width: usize, height: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("schema error at {path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Tensor(#[from] posterforge_tensor::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
