use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument {
        name: &'static str,
        reason: &'static str,
    },

    #[error("invalid dimension: n = {n}, delta = {delta} gives fewer than one measurement")]
    InvalidDimension { n: usize, delta: f64 },

    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("non-finite integrand value {value} at quadrature node u = {node}")]
    NonFiniteIntegrand { node: f64, value: f64 },

    #[error("divergence-free normalization is singular: |1 - alpha| = {gap} is below {floor}")]
    SingularNormalization { gap: f64, floor: f64 },

    #[error("iteration diverged at t = {iteration} (mse = {mse})")]
    Diverged { iteration: usize, mse: f64 },

    #[error("covariance is not factorizable after jitter (minimum eigenvalue {min_eigenvalue})")]
    IllConditionedCovariance { min_eigenvalue: f64 },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("schedule has no denoiser for t = {0}")]
    ScheduleExhausted(usize),

    #[error("unknown denoiser name `{0}`")]
    UnknownDenoiser(alloc::string::String),
}

pub type Result<T> = core::result::Result<T, Error>;
