//! Certified selective acting: release a model's output only when its score
//! falls under a cutoff whose verifier-failure rate has been certified, online,
//! to stay below a target level.

pub mod baselines;
pub mod calibration;
pub mod controller;
pub mod epoch;
pub mod eprocess;
pub mod error;
pub mod metrics;
pub mod runner;
pub mod seeds;
pub mod sparse;
pub mod streams;

pub use controller::{Controller, ControllerConfig, ReleasePolicy, RoundRecord};
pub use eprocess::ThresholdGrid;
pub use error::{CsaError, Result};
pub use runner::{preset, run_experiment, ExperimentConfig, ResultBundle};
pub use streams::Round;
