//! Order-parameter recursion of the generating-functional analysis for IST
//! (and OAMP, which is IST with divergence-free denoisers when `W = A^T`).
//!
//! The `N`-dimensional dynamics is replaced by a single-site process
//!
//! ```text
//! x^(0) = 0,
//! x^(s+1) = eta_s(k^(s) x0 + v^(s) + (Gamma x)^(s) + theta^(s)),   v ~ N(0, R)
//! ```
//!
//! whose moments `m^(s) = <x0 x^(s)>`, `C^(s,s') = <x^(s) x^(s')>` and response
//! `G^(s,s') = d<x^(s)>/d theta^(s')` close the recursion through
//!
//! ```text
//! D^(s,s') = sigma0^2 + (E[x0^2] - m^(s) - m^(s') + C^(s,s')) / delta
//! B        = I + G / delta           (unit lower triangular)
//! R        = B^-1 D B^-T
//! Gamma    = B^-1 G / delta = I - B^-1
//! k^(s)    = det Lambda_[s] = sum_j (B^-1)^(s,j)
//! ```
//!
//! The averages are estimated by Monte Carlo over `(x0, v)`; the response is
//! propagated pathwise through `J^(s+1,s') = eta_s'(arg_s) (1[s = s'] + (Gamma J)^(s,s'))`.
//!
//! Every horizon reuses the same draws: `x0` and the white noise of step `r`
//! come from their own substreams, and since the leading block of `R` does not
//! change when a row is appended, a batch at horizon `h` replays the paths of
//! the earlier batches exactly. The `x0` draws are rescaled so that their
//! sample second moment is exactly `E[x0^2]`; `D` is then a sample Gram
//! matrix plus `sigma0^2` and stays positive semidefinite however close
//! successive iterates get.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::linear_model::DenseMatrix;
use crate::math::{abs, sqrt};
use crate::prior::Prior;
use crate::rng::{split_seed, substream};
use crate::schedule::DenoiserSchedule;

pub const DEFAULT_SAMPLES: usize = 200_000;
pub const DEFAULT_CHUNKS: usize = 16;
pub const MIN_SAMPLES: usize = 1_000;
/// Relative floor for the smallest eigenvalue of `R` before jitter is refused.
const PSD_TOLERANCE: f64 = 1e-10;
const JITTER: f64 = 1e-12;
/// Seed index of the `x0` substream; step `r` uses index `r`.
const X0_STREAM: u64 = u64::MAX;

/// Runs independent Monte Carlo chunks; results must come back in index order.
pub trait ChunkExecutor {
    fn map_chunks<T, F>(&self, count: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs chunks one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ChunkExecutor for Sequential {
    fn map_chunks<T, F>(&self, count: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..count).map(job).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GfaModel {
    pub prior: Prior,
    pub delta: f64,
    pub sigma0_2: f64,
}

impl GfaModel {
    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidArgument {
                name: "delta",
                reason: "compression rate must be positive",
            });
        }
        if !(self.sigma0_2 >= 0.0 && self.sigma0_2.is_finite()) {
            return Err(Error::InvalidArgument {
                name: "sigma0_2",
                reason: "noise variance must be finite and nonnegative",
            });
        }
        Ok(())
    }
}

/// Monte Carlo settings. The sample split into `chunks` is part of the
/// configuration: results depend on it, not on how many workers run the chunks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    pub chunks: usize,
    /// Drive the recursion with `G = 0` (the induction hypothesis of the
    /// divergence-free argument) while still estimating `G` from the samples.
    pub impose_zero_response: bool,
}

impl McConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            chunks: DEFAULT_CHUNKS,
            impose_zero_response: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.samples < MIN_SAMPLES {
            return Err(Error::InvalidArgument {
                name: "samples",
                reason: "at least 1000 Monte Carlo samples are required",
            });
        }
        if self.chunks == 0 || self.chunks > self.samples {
            return Err(Error::InvalidArgument {
                name: "chunks",
                reason: "chunk count must be between 1 and the sample count",
            });
        }
        Ok(())
    }
}

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.set(i, j, m[(i, j)]);
        }
    }
    out
}

fn is_strictly_lower(g: &DenseMatrix) -> bool {
    (0..g.rows()).all(|i| (i..g.cols()).all(|j| g.get(i, j) == 0.0))
}

/// `D^(s,s') = sigma0^2 + (E[x0^2] - m^(s) - m^(s') + C^(s,s')) / delta`.
pub fn build_d(
    m: &[f64],
    c: &DenseMatrix,
    delta: f64,
    sigma0_2: f64,
    ex2: f64,
) -> Result<DenseMatrix> {
    let n = m.len();
    if c.rows() != n || c.cols() != n {
        return Err(Error::ShapeMismatch {
            expected_rows: n,
            expected_cols: n,
            rows: c.rows(),
            cols: c.cols(),
        });
    }
    let mut d = DenseMatrix::zeros(n, n);
    for s in 0..n {
        for r in 0..=s {
            let v = sigma0_2 + (ex2 - m[s] - m[r] + c.get(s, r)) / delta;
            d.set(s, r, v);
            d.set(r, s, v);
        }
    }
    Ok(d)
}

/// Returns `(R, Gamma)` with `R = B^-1 D B^-T` (symmetrized) and
/// `Gamma = B^-1 G / delta`, `B = I + G / delta`.
pub fn build_r_gamma(
    g: &DenseMatrix,
    d: &DenseMatrix,
    delta: f64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let n = g.rows();
    if g.cols() != n || d.rows() != n || d.cols() != n {
        return Err(Error::ShapeMismatch {
            expected_rows: n,
            expected_cols: n,
            rows: d.rows(),
            cols: d.cols(),
        });
    }
    let gs = to_na(g) / delta;
    let b = DMatrix::<f64>::identity(n, n) + &gs;
    let b_inv = if is_strictly_lower(g) {
        unit_lower_inverse(&b)
    } else {
        b.clone().try_inverse().ok_or(Error::SingularMatrix)?
    };
    let r = &b_inv * to_na(d) * b_inv.transpose();
    let r = (&r + r.transpose()) * 0.5;
    let gamma = &b_inv * gs;
    Ok((from_na(&r), from_na(&gamma)))
}

/// Forward substitution for a unit lower-triangular matrix.
fn unit_lower_inverse(b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.nrows();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for col in 0..n {
        for row in col + 1..n {
            let mut acc = 0.0;
            for k in col..row {
                acc += b[(row, k)] * inv[(k, col)];
            }
            inv[(row, col)] = -acc;
        }
    }
    inv
}

/// `Lambda_[s]`: rows `s' < s` are `delta_{s's''} + G^(s'',s') / delta`, row `s` is all ones.
pub fn lambda_matrix(g: &DenseMatrix, s: usize, delta: f64) -> DenseMatrix {
    let n = s + 1;
    let mut lam = DenseMatrix::zeros(n, n);
    for row in 0..n {
        for col in 0..n {
            let v = if row == s {
                1.0
            } else {
                let id = if row == col { 1.0 } else { 0.0 };
                id + g.get(col, row) / delta
            };
            lam.set(row, col, v);
        }
    }
    lam
}

/// `k^(s) = det Lambda_[s]`, by pivoted LU.
pub fn k_hat(g: &DenseMatrix, s: usize, delta: f64) -> f64 {
    to_na(&lambda_matrix(g, s, delta)).lu().determinant()
}

/// Lower Cholesky factor of `R`, adding `1e-12 * tr(R) / n` to the diagonal
/// when the plain factorization fails.
pub fn factor_covariance(r: &DenseMatrix) -> Result<DenseMatrix> {
    let a = to_na(r);
    if let Some(ch) = a.clone().cholesky() {
        return Ok(from_na(&ch.l()));
    }
    let n = a.nrows();
    let trace = a.trace();
    let min_eig = min_eigenvalue(&a);
    if min_eig < -PSD_TOLERANCE * abs(trace).max(f64::MIN_POSITIVE) {
        return Err(Error::IllConditionedCovariance {
            min_eigenvalue: min_eig,
        });
    }
    let jitter = JITTER * trace / n as f64;
    let jittered = &a + DMatrix::<f64>::identity(n, n) * jitter;
    match jittered.cholesky() {
        Some(ch) => Ok(from_na(&ch.l())),
        None => Err(Error::IllConditionedCovariance {
            min_eigenvalue: min_eig,
        }),
    }
}

fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn min_eigenvalue_of(r: &DenseMatrix) -> f64 {
    min_eigenvalue(&to_na(r))
}

/// Quantities derived from `(m, C, G)` at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub d: DenseMatrix,
    pub r: DenseMatrix,
    pub gamma: DenseMatrix,
    pub k_hat: Vec<f64>,
}

pub fn derive(model: &GfaModel, m: &[f64], c: &DenseMatrix, g: &DenseMatrix) -> Result<Derived> {
    let d = build_d(
        m,
        c,
        model.delta,
        model.sigma0_2,
        model.prior.second_moment(),
    )?;
    let (r, gamma) = build_r_gamma(g, &d, model.delta)?;
    let k_hat = (0..m.len()).map(|s| k_hat(g, s, model.delta)).collect();
    Ok(Derived { d, r, gamma, k_hat })
}

/// Inputs of one single-site batch: the process is simulated for
/// `denoisers.len()` steps, i.e. up to `x^(t+1)` for `t + 1` denoisers.
#[derive(Debug, Clone)]
pub struct SingleSiteProcess<'a> {
    pub prior: &'a Prior,
    pub derived: &'a Derived,
    pub denoisers: &'a [Denoiser],
    /// Optional external field `(s', h)` added to the argument of `eta_{s'}`.
    pub theta: Option<(usize, f64)>,
}

/// Sample means and standard errors of one batch at horizon `h = denoisers.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSiteEstimate {
    pub samples: usize,
    pub m: Vec<f64>,
    pub m_stderr: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub mean_x_stderr: Vec<f64>,
    pub c: DenseMatrix,
    pub c_stderr: DenseMatrix,
    pub g: DenseMatrix,
    pub g_stderr: DenseMatrix,
    /// `E[x0^2] - 2 m^(s) + C^(s,s)` with the standard error of `x^2 - 2 x0 x`.
    pub mse: Vec<f64>,
    pub mse_stderr: Vec<f64>,
    /// Direct average of `(x0 - x^(s))^2`.
    pub mse_direct: Vec<f64>,
    pub mse_direct_stderr: Vec<f64>,
}

/// Running sums of a chunk; `merge` in index order keeps reductions reproducible.
#[derive(Debug, Clone)]
struct Accumulator {
    len: usize,
    count: usize,
    sums: Vec<f64>,
    squares: Vec<f64>,
}

impl Accumulator {
    // layout per horizon of size n = h + 1: m (n), mean_x (n), C (n*n), G (n*n), mse (n), mse_direct (n)
    fn new(n: usize) -> Self {
        let len = 4 * n + 2 * n * n;
        Self {
            len: n,
            count: 0,
            sums: alloc::vec![0.0; len],
            squares: alloc::vec![0.0; len],
        }
    }

    #[inline]
    fn add(&mut self, idx: usize, v: f64) {
        self.sums[idx] += v;
        self.squares[idx] += v * v;
    }

    fn merge(&mut self, other: &Self) {
        self.count += other.count;
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.squares.iter_mut().zip(&other.squares) {
            *a += b;
        }
    }

    fn mean_stderr(&self, idx: usize) -> (f64, f64) {
        let n = self.count as f64;
        let mean = self.sums[idx] / n;
        let var = ((self.squares[idx] / n - mean * mean) * n / (n - 1.0)).max(0.0);
        (mean, sqrt(var / n))
    }
}

/// Simulates `count` samples of the single-site process; `x0` comes from
/// `x0_rng` (times `x0_scale`) and the white noise of step `r` from `noise[r]`.
fn simulate_chunk<R: Rng>(
    process: &SingleSiteProcess<'_>,
    chol: &DenseMatrix,
    count: usize,
    x0_scale: f64,
    x0_rng: &mut R,
    noise: &mut [R],
) -> Accumulator {
    let steps = process.denoisers.len();
    let n = steps + 1;
    let mut acc = Accumulator::new(n);
    acc.count = count;
    let (off_m, off_x, off_c) = (0, n, 2 * n);
    let off_g = off_c + n * n;
    let off_mse = off_g + n * n;
    let off_direct = off_mse + n;

    let gamma = &process.derived.gamma;
    let k = &process.derived.k_hat;
    let memory_rows: Vec<bool> = (0..steps)
        .map(|s| (0..s).any(|r| gamma.get(s, r) != 0.0))
        .collect();

    let mut xi = alloc::vec![0.0; steps];
    let mut v = alloc::vec![0.0; steps];
    let mut x = alloc::vec![0.0; n];
    let mut jac = alloc::vec![0.0; n * n];

    for _ in 0..count {
        let x0 = x0_scale * process.prior.sample(x0_rng);
        for (e, rng) in xi.iter_mut().zip(noise.iter_mut()) {
            *e = rng.sample(StandardNormal);
        }
        for s in 0..steps {
            let mut acc_v = 0.0;
            for r in 0..=s {
                acc_v += chol.get(s, r) * xi[r];
            }
            v[s] = acc_v;
        }
        x[0] = 0.0;
        jac.fill(0.0);
        for s in 0..steps {
            let mut arg = k[s] * x0 + v[s];
            if memory_rows[s] {
                for r in 0..s {
                    arg += gamma.get(s, r) * x[r];
                }
            }
            if let Some((at, h)) = process.theta {
                if at == s {
                    arg += h;
                }
            }
            let (val, der) = process.denoisers[s].eval_with_derivative(arg);
            x[s + 1] = val;
            // J^(s+1, s') for s' <= s
            for sp in 0..=s {
                let mut carry = if sp == s { 1.0 } else { 0.0 };
                if memory_rows[s] {
                    for r in sp + 1..s {
                        carry += gamma.get(s, r) * jac[r * n + sp];
                    }
                }
                jac[(s + 1) * n + sp] = der * carry;
            }
        }
        for s in 0..n {
            acc.add(off_m + s, x0 * x[s]);
            acc.add(off_x + s, x[s]);
            for r in 0..=s {
                acc.add(off_c + s * n + r, x[s] * x[r]);
            }
            for r in 0..s {
                acc.add(off_g + s * n + r, jac[s * n + r]);
            }
            acc.add(off_mse + s, x[s] * x[s] - 2.0 * x0 * x[s]);
            let e = x0 - x[s];
            acc.add(off_direct + s, e * e);
        }
    }
    acc
}

fn finish(acc: &Accumulator, ex2: f64) -> SingleSiteEstimate {
    let n = acc.len;
    let (off_m, off_x, off_c) = (0, n, 2 * n);
    let off_g = off_c + n * n;
    let off_mse = off_g + n * n;
    let off_direct = off_mse + n;
    let pair = |idx: usize| acc.mean_stderr(idx);
    let vec_of = |off: usize| -> (Vec<f64>, Vec<f64>) { (0..n).map(|s| pair(off + s)).unzip() };
    let (m, m_stderr) = vec_of(off_m);
    let (mean_x, mean_x_stderr) = vec_of(off_x);
    let (mse_part, mse_stderr) = vec_of(off_mse);
    let (mse_direct, mse_direct_stderr) = vec_of(off_direct);
    let mut c = DenseMatrix::zeros(n, n);
    let mut c_stderr = DenseMatrix::zeros(n, n);
    let mut g = DenseMatrix::zeros(n, n);
    let mut g_stderr = DenseMatrix::zeros(n, n);
    for s in 0..n {
        for r in 0..=s {
            let (mean, se) = pair(off_c + s * n + r);
            c.set(s, r, mean);
            c.set(r, s, mean);
            c_stderr.set(s, r, se);
            c_stderr.set(r, s, se);
        }
        for r in 0..s {
            let (mean, se) = pair(off_g + s * n + r);
            g.set(s, r, mean);
            g_stderr.set(s, r, se);
        }
    }
    SingleSiteEstimate {
        samples: acc.count,
        m,
        m_stderr,
        mean_x,
        mean_x_stderr,
        c,
        c_stderr,
        g,
        g_stderr,
        mse: mse_part.iter().map(|p| ex2 + p).collect(),
        mse_stderr,
        mse_direct,
        mse_direct_stderr,
    }
}

/// Estimates the order parameters of the single-site process up to
/// `x^(h)`, `h = denoisers.len()`, from `mc.samples` draws of `(x0, v)`.
/// Only the leading `h x h` block of `derived` is used.
pub fn single_site_mc<E: ChunkExecutor>(
    process: &SingleSiteProcess<'_>,
    mc: &McConfig,
    executor: &E,
) -> Result<SingleSiteEstimate> {
    mc.validate()?;
    let steps = process.denoisers.len();
    if steps == 0 || process.derived.r.rows() < steps || process.derived.k_hat.len() < steps {
        return Err(Error::InvalidArgument {
            name: "denoisers",
            reason: "need one denoiser per simulated step and matching order parameters",
        });
    }
    let r = leading_block(&process.derived.r, steps);
    let chol = factor_covariance(&r)?;
    let per = mc.samples / mc.chunks;
    let extra = mc.samples % mc.chunks;
    let raw = sample_second_moment(process.prior, mc, executor)?;
    let x0_scale = if raw > 0.0 {
        sqrt(process.prior.second_moment() / raw)
    } else {
        1.0
    };
    let parts = executor.map_chunks(mc.chunks, |chunk| {
        let count = per + usize::from(chunk < extra);
        let mut x0_rng = substream(split_seed(mc.seed, X0_STREAM), chunk as u64);
        let mut noise: Vec<_> = (0..steps)
            .map(|r| substream(split_seed(mc.seed, r as u64), chunk as u64))
            .collect();
        simulate_chunk(process, &chol, count, x0_scale, &mut x0_rng, &mut noise)
    });
    let mut total = Accumulator::new(steps + 1);
    for p in &parts {
        total.merge(p);
    }
    Ok(finish(&total, process.prior.second_moment()))
}

/// Sample mean of `x0^2` over the raw draws that [`single_site_mc`] rescales.
pub fn sample_second_moment<E: ChunkExecutor>(
    prior: &Prior,
    mc: &McConfig,
    executor: &E,
) -> Result<f64> {
    mc.validate()?;
    let per = mc.samples / mc.chunks;
    let extra = mc.samples % mc.chunks;
    let sums = executor.map_chunks(mc.chunks, |chunk| {
        let count = per + usize::from(chunk < extra);
        let mut rng = substream(split_seed(mc.seed, X0_STREAM), chunk as u64);
        (0..count)
            .map(|_| {
                let x0 = prior.sample(&mut rng);
                x0 * x0
            })
            .sum::<f64>()
    });
    Ok(sums.iter().sum::<f64>() / mc.samples as f64)
}

fn leading_block(a: &DenseMatrix, n: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, a.get(i, j));
        }
    }
    out
}

/// Full state of the recursion after `T` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderParameters {
    pub horizon: usize,
    pub m: Vec<f64>,
    pub m_stderr: Vec<f64>,
    pub c: DenseMatrix,
    pub c_stderr: DenseMatrix,
    /// Monte Carlo estimate of the response; strictly lower triangular.
    pub g: DenseMatrix,
    pub g_stderr: DenseMatrix,
    /// Whether the recursion was driven with `G = 0` instead of `g`.
    pub response_imposed_zero: bool,
    pub d: DenseMatrix,
    pub r: DenseMatrix,
    pub gamma: DenseMatrix,
    pub k_hat: Vec<f64>,
    /// `R^(s,s)` at which `eta_s` was built (`T + 1` entries).
    pub tau2: Vec<f64>,
    pub mse: Vec<f64>,
    pub mse_stderr: Vec<f64>,
    pub mse_direct: Vec<f64>,
    pub mse_direct_stderr: Vec<f64>,
    pub denoisers: Vec<Denoiser>,
}

impl OrderParameters {
    fn initial(ex2: f64) -> Self {
        let one = DenseMatrix::zeros(1, 1);
        Self {
            horizon: 0,
            m: alloc::vec![0.0],
            m_stderr: alloc::vec![0.0],
            c: one.clone(),
            c_stderr: one.clone(),
            g: one.clone(),
            g_stderr: one.clone(),
            response_imposed_zero: false,
            d: one.clone(),
            r: one.clone(),
            gamma: one,
            k_hat: alloc::vec![1.0],
            tau2: Vec::new(),
            mse: alloc::vec![ex2],
            mse_stderr: alloc::vec![0.0],
            mse_direct: alloc::vec![ex2],
            mse_direct_stderr: alloc::vec![0.0],
            denoisers: Vec::new(),
        }
    }

    /// The response matrix that drives the recursion.
    pub fn driving_response(&self) -> DenseMatrix {
        if self.response_imposed_zero {
            DenseMatrix::zeros(self.g.rows(), self.g.cols())
        } else {
            self.g.clone()
        }
    }

    fn extend(&mut self, est: &SingleSiteEstimate) {
        let n = self.m.len() + 1;
        let grow = |old: &DenseMatrix| {
            let mut out = DenseMatrix::zeros(n, n);
            for i in 0..n - 1 {
                for j in 0..n - 1 {
                    out.set(i, j, old.get(i, j));
                }
            }
            out
        };
        let (mut c, mut cs, mut g, mut gs) = (
            grow(&self.c),
            grow(&self.c_stderr),
            grow(&self.g),
            grow(&self.g_stderr),
        );
        let t = n - 1;
        for s in 0..n {
            c.set(t, s, est.c.get(t, s));
            c.set(s, t, est.c.get(t, s));
            cs.set(t, s, est.c_stderr.get(t, s));
            cs.set(s, t, est.c_stderr.get(t, s));
            if s < t {
                g.set(t, s, est.g.get(t, s));
                gs.set(t, s, est.g_stderr.get(t, s));
            }
        }
        self.c = c;
        self.c_stderr = cs;
        self.g = g;
        self.g_stderr = gs;
        self.m.push(est.m[t]);
        self.m_stderr.push(est.m_stderr[t]);
        self.mse.push(est.mse[t]);
        self.mse_stderr.push(est.mse_stderr[t]);
        self.mse_direct.push(est.mse_direct[t]);
        self.mse_direct_stderr.push(est.mse_direct_stderr[t]);
        self.horizon = t;
    }
}

/// Extends the order parameters one horizon at a time: derive `D, R, Gamma, k`
/// from the current `(m, C, G)`, build `eta_t` at `tau_t^2 = R^(t,t)`, simulate
/// the single-site process to `x^(t+1)` with a fresh batch, and append the new
/// row of `m, C, G`. Earlier rows are never re-estimated.
pub fn gfa_run<S, E>(
    model: &GfaModel,
    schedule: &S,
    iterations: usize,
    mc: &McConfig,
    executor: &E,
) -> Result<OrderParameters>
where
    S: DenoiserSchedule + ?Sized,
    E: ChunkExecutor,
{
    model.validate()?;
    mc.validate()?;
    let ex2 = model.prior.second_moment();
    let mut op = OrderParameters::initial(ex2);
    op.response_imposed_zero = mc.impose_zero_response;
    for t in 0..iterations {
        let derived = derive(model, &op.m, &op.c, &op.driving_response())?;
        let tau2 = derived.r.get(t, t);
        op.tau2.push(tau2);
        op.denoisers
            .push(schedule.denoiser(t, sqrt(tau2.max(0.0)))?);
        let process = SingleSiteProcess {
            prior: &model.prior,
            derived: &derived,
            denoisers: &op.denoisers,
            theta: None,
        };
        let est = single_site_mc(&process, mc, executor)?;
        op.extend(&est);
    }
    let derived = derive(model, &op.m, &op.c, &op.driving_response())?;
    op.tau2.push(derived.r.get(iterations, iterations));
    op.d = derived.d;
    op.r = derived.r;
    op.gamma = derived.gamma;
    op.k_hat = derived.k_hat;
    Ok(op)
}

/// Independent repetitions of the free run used to measure its total error.
pub const DEFAULT_REPLICATES: usize = 16;

/// Outcome of checking that the response vanishes for divergence-free schedules.
///
/// Two recursions are run. The inductive run drives the dynamics with `G = 0`
/// (the induction hypothesis) and estimates `G` from each fresh batch, so its
/// within-batch standard errors are the complete error of every entry. The
/// free run feeds its own estimates back; there an entry such as `G^(3,0)`
/// is roughly `Gamma^(2,1) E[eta_2' eta_0']` and inherits the sampling noise
/// of earlier horizons, which within-batch errors do not see. Its error is
/// measured instead from the spread of independent replicate runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    /// Largest `|G^(s,s')|` over the inductive run and the first free replicate.
    pub max_abs_g: f64,
    /// Largest of the two z-scores below.
    pub max_abs_g_over_stderr: f64,
    /// Largest `|G^(s,s')| / stderr` of the inductive run.
    pub inductive_g_over_stderr: f64,
    /// Largest `|mean_k G_k^(s,s')| / (sd_k / sqrt(K))` over `K` free replicates.
    pub free_g_over_stderr: f64,
    /// `k^(s)` of the inductive run.
    pub k_hat_values: Vec<f64>,
    /// `k^(s)` of the first free replicate.
    pub k_hat_free: Vec<f64>,
    /// `max |R - D|` of the first free replicate.
    pub r_minus_d_norm: f64,
    /// Largest replicate standard deviation of an entry of `R - D`: the
    /// Monte Carlo error of one free run, propagated through the recursion.
    pub r_minus_d_bound: f64,
    /// First-order propagation of the within-batch `G` errors,
    /// `max (|S_G| |D| + |D| |S_G|^T) / delta`; ignores inherited noise.
    pub r_minus_d_first_order: f64,
    pub replicates: usize,
    pub inductive: OrderParameters,
    pub free: OrderParameters,
}

fn max_z(op: &OrderParameters) -> (f64, f64) {
    let mut max_abs: f64 = 0.0;
    let mut max_ratio: f64 = 0.0;
    let n = op.g.rows();
    for s in 0..n {
        for r in 0..s {
            let g = abs(op.g.get(s, r));
            let se = op.g_stderr.get(s, r);
            max_abs = max_abs.max(g);
            let ratio = if g == 0.0 {
                0.0
            } else if se > 0.0 {
                g / se
            } else {
                f64::INFINITY
            };
            max_ratio = max_ratio.max(ratio);
        }
    }
    (max_abs, max_ratio)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, sqrt(var))
}

/// Checks that a divergence-free schedule has vanishing response, `k = 1`
/// and `R = D`; see [`Lemma2Report`] for the two runs involved.
pub fn verify_lemma2<S, E>(
    model: &GfaModel,
    schedule: &S,
    iterations: usize,
    mc: &McConfig,
    replicates: usize,
    executor: &E,
) -> Result<Lemma2Report>
where
    S: DenoiserSchedule + ?Sized,
    E: ChunkExecutor,
{
    if replicates < 2 {
        return Err(Error::InvalidArgument {
            name: "replicates",
            reason: "at least two free replicates are needed for an error estimate",
        });
    }
    let inductive = gfa_run(
        model,
        schedule,
        iterations,
        &McConfig {
            impose_zero_response: true,
            ..*mc
        },
        executor,
    )?;
    let free_runs = (0..replicates)
        .map(|k| {
            gfa_run(
                model,
                schedule,
                iterations,
                &McConfig {
                    impose_zero_response: false,
                    seed: split_seed(mc.seed, u64::MAX - k as u64),
                    ..*mc
                },
                executor,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let free = &free_runs[0];

    let (abs_ind, z_ind) = max_z(&inductive);
    let (abs_free, _) = max_z(free);
    let n = free.r.rows();
    let root_k = sqrt(replicates as f64);
    let mut z_free: f64 = 0.0;
    let mut spread: f64 = 0.0;
    let mut diff: f64 = 0.0;
    let mut first_order: f64 = 0.0;
    let mut column = alloc::vec![0.0; replicates];
    for i in 0..n {
        for j in 0..n {
            if j < i {
                for (c, op) in column.iter_mut().zip(&free_runs) {
                    *c = op.g.get(i, j);
                }
                let (mean, sd) = mean_sd(&column);
                let z = if mean == 0.0 {
                    0.0
                } else if sd > 0.0 {
                    abs(mean) * root_k / sd
                } else {
                    f64::INFINITY
                };
                z_free = z_free.max(z);
            }
            for (c, op) in column.iter_mut().zip(&free_runs) {
                *c = op.r.get(i, j) - op.d.get(i, j);
            }
            spread = spread.max(mean_sd(&column).1);
            diff = diff.max(abs(free.r.get(i, j) - free.d.get(i, j)));
            let mut b = 0.0;
            for k in 0..n {
                b += free.g_stderr.get(i, k) * abs(free.d.get(k, j))
                    + abs(free.d.get(i, k)) * free.g_stderr.get(j, k);
            }
            first_order = first_order.max(b / model.delta);
        }
    }
    let free = free_runs
        .into_iter()
        .next()
        .expect("at least two replicates");
    Ok(Lemma2Report {
        max_abs_g: abs_ind.max(abs_free),
        max_abs_g_over_stderr: z_ind.max(z_free),
        inductive_g_over_stderr: z_ind,
        free_g_over_stderr: z_free,
        k_hat_values: inductive.k_hat.clone(),
        k_hat_free: free.k_hat.clone(),
        r_minus_d_norm: diff,
        r_minus_d_bound: spread,
        r_minus_d_first_order: first_order,
        replicates,
        inductive,
        free,
    })
}
