//! Numerical core for studying iterative sparse recovery on the linear model
//! `y = A x0 + omega` with i.i.d. Gaussian `A`.
//!
//! The crate is `no_std` (with `alloc`) and contains everything that is pure
//! computation:
//!
//! - [`prior`], [`denoiser`], [`quadrature`]: Bernoulli-Gaussian signals,
//!   scalar denoisers, the divergence-free wrapper and Gaussian expectations.
//! - [`linear_model`]: seeded problem instances and the de-correlation check.
//! - [`recovery`]: finite-N IST, AMP and OAMP trajectories.
//! - [`state_evolution`]: the scalar state-evolution recursion.
//! - [`gfa`]: the exact order-parameter recursion (single-site process with
//!   memory kernel and response), estimated by Monte Carlo.
//!
//! IO, configuration, parallel execution and the command line live in the
//! `sparsedyn` crate.
#![no_std]

extern crate alloc;

pub mod denoiser;
pub mod error;
pub mod gfa;
pub mod linear_model;
mod math;
pub mod prior;
pub mod quadrature;
pub mod recovery;
pub mod rng;
pub mod schedule;
pub mod state_evolution;

pub use denoiser::{
    check_divergence_free, df_transform, mmse_denoiser_bg, Denoiser, DenoiserKind, ScaleMode,
};
pub use error::{Error, Result};
pub use gfa::{
    gfa_run, verify_lemma2, ChunkExecutor, GfaModel, McConfig, OrderParameters, Sequential,
};
pub use linear_model::{decorrelation_residual, generate_instance, DenseMatrix, ProblemInstance};
pub use prior::Prior;
pub use quadrature::{gaussian_expectation, QuadratureRule};
pub use recovery::{
    error_recursion_view, run_amp, run_ist, run_oamp, Algorithm, TauSource, TrajectoryRecord,
};
pub use schedule::{DenoiserRule, DenoiserSchedule, FixedSchedule};
pub use state_evolution::{se_fixed_point, se_run, se_step, SeModel, SeTrace};
