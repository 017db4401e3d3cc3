//! Measurement model `y = A x0 + omega` with i.i.d. Gaussian `A`.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{floor, sqrt};
use crate::prior::Prior;
use crate::rng::{substream, MATRIX_STREAM, NOISE_STREAM, SIGNAL_STREAM};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected_rows: rows,
                expected_cols: cols,
                rows: data.len() / cols.max(1),
                cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for (j, v) in self.row(i).iter().enumerate() {
                t.data[j * self.rows + i] = *v;
            }
        }
        t
    }

    /// `out = self * x`.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    /// `out = self^T * z`.
    pub fn mul_transpose_vec(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (i, zi) in z.iter().enumerate() {
            if *zi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += zi * a;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable; order is fixed so results are reproducible
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// One realization of the measurement model together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    a: DenseMatrix,
    x0: Vec<f64>,
    omega: Vec<f64>,
    y: Vec<f64>,
    delta: f64,
    sigma0_2: f64,
    seed: u64,
    prior: Prior,
}

impl ProblemInstance {
    /// Assembles an instance; `y` is always recomputed as `A x0 + omega`.
    pub fn from_parts(
        a: DenseMatrix,
        x0: Vec<f64>,
        omega: Vec<f64>,
        sigma0_2: f64,
        seed: u64,
        prior: Prior,
    ) -> Result<Self> {
        let (m, n) = (a.rows(), a.cols());
        if x0.len() != n || omega.len() != m {
            return Err(Error::ShapeMismatch {
                expected_rows: m,
                expected_cols: n,
                rows: omega.len(),
                cols: x0.len(),
            });
        }
        if m == 0 || n == 0 {
            return Err(Error::InvalidDimension { n, delta: 0.0 });
        }
        let mut y = alloc::vec![0.0; m];
        a.mul_vec(&x0, &mut y);
        for (yi, wi) in y.iter_mut().zip(&omega) {
            *yi += wi;
        }
        Ok(Self {
            delta: m as f64 / n as f64,
            a,
            x0,
            omega,
            y,
            sigma0_2,
            seed,
            prior,
        })
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Actual `M / N`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn sigma0_2(&self) -> f64 {
        self.sigma0_2
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    /// `||x0||^2 / N`.
    pub fn signal_power(&self) -> f64 {
        dot(&self.x0, &self.x0) / self.n() as f64
    }
}

/// `M = round_half_up(delta * n)`.
pub fn measurement_count(n: usize, delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument {
            name: "delta",
            reason: "compression rate must lie in (0, 1]",
        });
    }
    let m = floor(delta * n as f64 + 0.5) as usize;
    if m < 1 {
        return Err(Error::InvalidDimension { n, delta });
    }
    Ok(m)
}

/// Draws `A` with entries `N(0, 1/M)`, `x0` from the prior and `omega ~ N(0, sigma0_2 I)`,
/// each from its own substream of `seed`.
pub fn generate_instance(
    n: usize,
    delta: f64,
    sigma0_2: f64,
    prior: &Prior,
    seed: u64,
) -> Result<ProblemInstance> {
    if !(sigma0_2 >= 0.0 && sigma0_2.is_finite()) {
        return Err(Error::InvalidArgument {
            name: "sigma0_2",
            reason: "noise variance must be finite and nonnegative",
        });
    }
    let m = measurement_count(n, delta)?;
    let a = generate_matrix(m, n, seed);
    let x0 = generate_signal(n, prior, seed);
    let mut rng = substream(seed, NOISE_STREAM);
    let sd = sqrt(sigma0_2);
    let omega: Vec<f64> = (0..m)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ProblemInstance::from_parts(a, x0, omega, sigma0_2, seed, *prior)
}

pub fn generate_matrix(m: usize, n: usize, seed: u64) -> DenseMatrix {
    let mut rng = substream(seed, MATRIX_STREAM);
    let sd = 1.0 / sqrt(m as f64);
    let data = (0..m * n)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    DenseMatrix {
        rows: m,
        cols: n,
        data,
    }
}

pub fn generate_signal(n: usize, prior: &Prior, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, SIGNAL_STREAM);
    (0..n).map(|_| prior.sample(&mut rng)).collect()
}

/// `tr(I - W A) / N` for `W` of shape `N x M` and `A` of shape `M x N`.
pub fn decorrelation_residual(w: &DenseMatrix, a: &DenseMatrix) -> Result<f64> {
    let (m, n) = (a.rows(), a.cols());
    if w.rows() != n || w.cols() != m {
        return Err(Error::ShapeMismatch {
            expected_rows: n,
            expected_cols: m,
            rows: w.rows(),
            cols: w.cols(),
        });
    }
    // tr(WA) = sum_{i,k} W[i][k] A[k][i]
    let mut trace = 0.0;
    for i in 0..n {
        let wr = w.row(i);
        for (k, wik) in wr.iter().enumerate() {
            trace += wik * a.get(k, i);
        }
    }
    Ok((n as f64 - trace) / n as f64)
}
