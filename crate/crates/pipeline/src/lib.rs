//! Training, evaluation, ablation and benchmarking of Fourier neural
//! operators for vehicle-track coupled dynamics, plus the `mbdno` tool.

pub mod ablation;
pub mod bench;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod optim;
pub mod report;
pub mod train;
pub mod workflow;

pub use config::{lr_schedule, RunConfig, TrainConfig};
pub use error::{PipelineError, Result};
pub use metrics::{evaluate, EvalReport};
pub use train::Trainer;
