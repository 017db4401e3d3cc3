//! Gaussian expectations by quadrature.
//!
//! Two methods are available. Gauss–Hermite (normalized to the standard
//! normal measure) is exact for polynomials of degree `2 * order - 1` and is
//! the right tool for smooth, slowly varying integrands. Denoiser integrands
//! are neither: soft thresholds have kinks and the Bernoulli-Gaussian
//! posterior mean switches sharply once the channel noise is small, so the
//! default is adaptive Gauss–Kronrod on a truncated range split at the kinks.

use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{abs, ceil, exp, pow, sqrt};
use crate::prior::Prior;

pub const DEFAULT_ORDER: usize = 61;
pub const DEFAULT_TOLERANCE: f64 = 1e-13;

/// Half-width (in standard deviations) of the truncated domain of the adaptive method.
const TRUNCATION: f64 = 13.0;
const PANEL_WIDTH: f64 = 1.0;
const MAX_SUBDIVISIONS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadratureMethod {
    GaussHermite,
    Adaptive,
}

/// Rule for `E[f(z)]`, `z ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    method: QuadratureMethod,
    order: usize,
    tolerance: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::adaptive(DEFAULT_ORDER, DEFAULT_TOLERANCE).expect("default rule is valid")
    }
}

impl QuadratureRule {
    /// Pure Gauss–Hermite rule of the given order (kinked integrands still go
    /// through the adaptive path).
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        let mut rule = Self::adaptive(order, DEFAULT_TOLERANCE)?;
        rule.method = QuadratureMethod::GaussHermite;
        Ok(rule)
    }

    /// Adaptive Gauss–Kronrod with relative tolerance `tolerance`; `order`
    /// sizes the Hermite rule kept for [`QuadratureRule::hermite`].
    pub fn adaptive(order: usize, tolerance: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument {
                name: "order",
                reason: "quadrature order must be positive",
            });
        }
        if !(tolerance > 0.0 && tolerance < 1.0) {
            return Err(Error::InvalidArgument {
                name: "tolerance",
                reason: "quadrature tolerance must lie in (0, 1)",
            });
        }
        let (x, w) = hermite_physicists(order);
        // x -> sqrt(2) x maps exp(-x^2) onto the standard normal density.
        let nodes: Vec<f64> = x.iter().map(|&xi| core::f64::consts::SQRT_2 * xi).collect();
        let total: f64 = w.iter().sum();
        let weights: Vec<f64> = w.iter().map(|&wi| wi / total).collect();
        Ok(Self {
            method: QuadratureMethod::Adaptive,
            order,
            tolerance,
            nodes,
            weights,
        })
    }

    pub fn method(&self) -> QuadratureMethod {
        self.method
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Gauss–Hermite estimate of `E[f(scale * z)]`.
    pub fn hermite<F>(&self, scale: f64, mut f: F) -> Result<f64>
    where
        F: FnMut(f64) -> f64,
    {
        let mut acc = 0.0;
        for (z, w) in self.nodes.iter().zip(&self.weights) {
            let u = scale * z;
            acc += w * checked(u, f(u))?;
        }
        Ok(acc)
    }

    /// `E[f(scale * z)]` for `z ~ N(0, 1)`. `kinks` are points (in the
    /// argument of `f`) where `f` or its derivative jumps.
    pub fn standard_normal<F>(&self, scale: f64, kinks: &[f64], mut f: F) -> Result<f64>
    where
        F: FnMut(f64) -> f64,
    {
        let scale = abs(scale);
        if scale == 0.0 {
            return checked(0.0, f(0.0));
        }
        if self.method == QuadratureMethod::GaussHermite && kinks.is_empty() {
            return self.hermite(scale, f);
        }
        let breaks: Vec<f64> = kinks
            .iter()
            .map(|k| k / scale)
            .filter(|b| abs(*b) < TRUNCATION)
            .collect();
        self.adaptive_integral(scale, breaks, f)
    }

    fn adaptive_integral<F>(&self, scale: f64, mut breaks: Vec<f64>, mut f: F) -> Result<f64>
    where
        F: FnMut(f64) -> f64,
    {
        breaks.push(-TRUNCATION);
        breaks.push(TRUNCATION);
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        breaks.dedup();
        let mut g = |z: f64| -> Result<f64> {
            let u = scale * z;
            let density = exp(-0.5 * z * z) / sqrt(2.0 * PI);
            Ok(density * checked(u, f(u))?)
        };

        let mut pending: Vec<(f64, f64, f64, f64)> = Vec::new();
        let mut coarse_abs = 0.0;
        for seg in breaks.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let panels = ceil((b - a) / PANEL_WIDTH).max(1.0) as usize;
            let h = (b - a) / panels as f64;
            for p in 0..panels {
                let lo = a + p as f64 * h;
                let hi = if p + 1 == panels { b } else { lo + h };
                let (est, err, l1) = kronrod(&mut g, lo, hi)?;
                coarse_abs += l1;
                pending.push((lo, hi, est, err));
            }
        }
        let budget = self.tolerance * coarse_abs.max(f64::MIN_POSITIVE);
        let span = 2.0 * TRUNCATION;
        let mut total = 0.0;
        let mut splits = 0;
        while let Some((a, b, est, err)) = pending.pop() {
            let local = budget * (b - a) / span;
            if err <= local || splits >= MAX_SUBDIVISIONS || b - a < 1e-12 {
                total += est;
                continue;
            }
            splits += 1;
            let mid = 0.5 * (a + b);
            let (e1, r1, _) = kronrod(&mut g, a, mid)?;
            let (e2, r2, _) = kronrod(&mut g, mid, b)?;
            pending.push((mid, b, e2, r2));
            pending.push((a, mid, e1, r1));
        }
        Ok(total)
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate on `[a, b]` with the embedded 7-point Gauss
/// difference as error estimate; also returns the Kronrod estimate of `int |g|`.
fn kronrod<G>(g: &mut G, a: f64, b: f64) -> Result<(f64, f64, f64)>
where
    G: FnMut(f64) -> Result<f64>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = g(c)?;
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    let mut l1 = WGK[7] * abs(fc);
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = g(c - dx)?;
        let f2 = g(c + dx)?;
        kron += WGK[j] * (f1 + f2);
        l1 += WGK[j] * (abs(f1) + abs(f2));
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    Ok((kron * h, abs((kron - gauss) * h), l1 * abs(h)))
}

fn checked(node: f64, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteIntegrand { node, value })
    }
}

/// `E_{x0, z}[f(x0 + tau z)]` for the signal prior, integrating each mixture
/// component of `x0 + tau z` separately.
pub fn gaussian_expectation<F>(
    f: F,
    prior: &Prior,
    tau: f64,
    rule: &QuadratureRule,
    kinks: &[f64],
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut acc = 0.0;
    for (weight, std) in prior.observation_components(tau) {
        acc += weight * rule.standard_normal(std, kinks, &f)?;
    }
    Ok(acc)
}

/// Newton iteration on the orthonormal Hermite recurrence; returns nodes in
/// decreasing order and weights for `exp(-x^2)` (summing to `sqrt(pi)`).
fn hermite_physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = pow(PI, -0.25);
    let nf = n as f64;
    let mut x = alloc::vec![0.0; n];
    let mut w = alloc::vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => sqrt(2.0 * nf + 1.0) - 1.85575 * pow(2.0 * nf + 1.0, -0.16667),
            1 => z - 1.14 * pow(nf, 0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 1.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * sqrt(2.0 / (jf + 1.0)) * p2 - sqrt(jf / (jf + 1.0)) * p3;
            }
            pp = sqrt(2.0 * nf) * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if abs(z - z1) <= 1e-15 * abs(z).max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
