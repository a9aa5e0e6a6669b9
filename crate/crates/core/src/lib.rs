//! Vehicle-track coupled dynamics for a vertical-plane high-speed train model.
//!
//! The crate assembles the coupled ordinary differential equation system of a
//! ten-DOF vehicle riding on a modally reduced Euler-Bernoulli rail, synthesizes
//! random track irregularity, integrates the system in time and writes the
//! resulting trajectories as a dataset for operator learning.

pub mod dataset;
pub mod error;
pub mod excitation;
pub mod integrate;
pub mod modal;
pub mod params;
pub mod rail;
pub mod residual;
pub mod system;

pub use error::{Error, Result};
pub use modal::{beam_modal, BeamModal};
pub use params::{BeamParams, RigidBodyParams, SuspensionParams, VtcdParams, N_VARIED, VARIED_PARAMETER_NAMES};
pub use residual::{ContactTerm, EquationSet};
pub use system::{assemble_codes, contact_force, CodesSystem, ContactState, HertzContact};
pub use rail::reduce_rail_output;
pub use integrate::{integrate, IntegratorConfig, Scheme, TrajectoryRecord};
pub use excitation::{IrregularityProfile, PsdModel, WheelExcitation};
