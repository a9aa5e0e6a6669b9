use std::io;
use std::path::PathBuf;

use mbdno_operator::OperatorError;
use mbdno_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Core(#[from] mbdno_core::Error),

    #[error(transparent)]
    Operator(#[from] OperatorError),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Process exit codes of the command-line tool.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const IO: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

impl PipelineError {
    pub fn is_numerical(&self) -> bool {
        match self {
            PipelineError::Numerical(_) => true,
            PipelineError::Core(e) => e.is_numerical(),
            PipelineError::Operator(OperatorError::Core(e)) => e.is_numerical(),
            PipelineError::Operator(e) => e.is_numerical(),
            _ => false,
        }
    }

    fn is_io(&self) -> bool {
        matches!(
            self,
            PipelineError::Io { .. }
                | PipelineError::Core(mbdno_core::Error::Io(_))
                | PipelineError::Tensor(TensorError::Io(_))
                | PipelineError::Operator(OperatorError::Tensor(TensorError::Io(_)))
                | PipelineError::Operator(OperatorError::Core(mbdno_core::Error::Io(_)))
        )
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            exit::NUMERICAL
        } else if self.is_io() {
            exit::IO
        } else {
            exit::VALIDATION
        }
    }
}

pub(crate) fn config(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}
