//! Dense f64 tensors with a reverse-mode tape, sized for Fourier neural
//! operators over `[batch, channel, time]` signals.

pub mod archive;
mod error;
pub mod gradcheck;
pub mod tape;
mod tensor;

pub use archive::Archive;
pub use error::{Result, TensorError};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use tape::{Activation, Gradients, Tape, Var};
pub use tensor::Tensor;
