//! Experiment harness on top of `sparsedyn-core`: TOML configuration,
//! parallel trials, matched simulation / state-evolution / order-parameter
//! comparisons, CSV and JSON reports, sweeps and a binary instance format.
//!
//! The `sparsedyn` binary exposes all of it on the command line.

pub mod config;
pub mod error;
pub mod executor;
pub mod experiment;
pub mod instance_io;

pub use config::{AlgorithmChoice, ExperimentConfig, QuadratureChoice, SweepAxis, TauChoice};
pub use error::{LabError, Result};
pub use executor::RayonExecutor;
pub use experiment::{run_experiment, sweep, ComparisonReport, ComparisonRow};
