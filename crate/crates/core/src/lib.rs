//! Chemotherapy dose scheduling on a four-state tumor / immune / drug model.
//!
//! Three schedulers share one patient model: Hermite-Simpson direct collocation
//! ([`ocp`]), DQN and DDPG ([`learn`]). The [`environment`] module is the
//! episodic surface the agents train against and [`experiments`] runs the
//! robustness and sample-efficiency comparisons.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod experiments;
pub mod io;
pub mod learn;
pub mod ocp;
pub mod scalar;

pub use dynamics::{Case, DiffusionSpec, DoseSource, Patient, PatientParams, SimMode, SimOptions, StateVec, Trajectory};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Model coefficients in double precision.
pub type Params = PatientParams<f64>;
/// Model state in double precision.
pub type State = StateVec<f64>;
