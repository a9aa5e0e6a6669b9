//! Fourier neural operator for vehicle-track response trajectories and the
//! data, ODE-residual and derivative objectives it is trained with.

pub mod encode;
mod error;
pub mod fno;
pub mod losses;

pub use encode::{decode_input, decode_output, encode_batch, encode_raw, encode_record, InputLayout, INPUT_CHANNELS};
pub use error::{OperatorError, Result};
pub use fno::{Checkpoint, FnoConfig, FnoModel, OUTPUT_CHANNELS};
pub use losses::{LossConfig, LossMode};
