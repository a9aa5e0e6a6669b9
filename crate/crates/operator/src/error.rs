use thiserror::Error;

pub type Result<T> = std::result::Result<T, OperatorError>;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] mbdno_tensor::TensorError),

    #[error(transparent)]
    Core(#[from] mbdno_core::Error),
}

impl OperatorError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, OperatorError::NonFinite(_))
    }
}

pub(crate) fn config(msg: impl Into<String>) -> OperatorError {
    OperatorError::Config(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> OperatorError {
    OperatorError::Shape(msg.into())
}
