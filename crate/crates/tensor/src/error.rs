use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {shapes}")]
    Shape { op: &'static str, shapes: String },
    #[error("{op}: index {index} out of range for size {size}")]
    Index { op: &'static str, index: usize, size: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err(op: &'static str, shapes: &[&[usize]]) -> TensorError {
    TensorError::Shape { op, shapes: shapes.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(" vs ") }
}
