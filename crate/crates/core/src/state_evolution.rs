//! Scalar state evolution: `tau_t^2 = sigma0^2 + sigma_t^2 / delta`,
//! `sigma_{t+1}^2 = E[(x0 - eta_t(x0 + tau_t z))^2]`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::math::{abs, sqrt};
use crate::prior::Prior;
use crate::quadrature::QuadratureRule;
use crate::schedule::DenoiserSchedule;

/// `E[(x0 - eta(x0 + tau z))^2]`, computed per mixture component: the spike
/// contributes `E[eta(tau z)^2]`, the slab is handled through the Gaussian
/// conditional law of `x0` given `u = x0 + tau z`.
pub fn channel_mse(den: &Denoiser, prior: &Prior, tau: f64, rule: &QuadratureRule) -> Result<f64> {
    let kinks = den.kinks();
    let t2 = tau * tau;
    let v = prior.amp_variance;
    let mut acc = 0.0;
    if prior.epsilon < 1.0 {
        let spike = rule.standard_normal(tau, &kinks, |u| {
            let e = den.eval(u);
            e * e
        })?;
        acc += (1.0 - prior.epsilon) * spike;
    }
    if prior.epsilon > 0.0 {
        let total = v + t2;
        let slab = if total == 0.0 {
            let e = den.eval(0.0);
            e * e
        } else {
            let gain = v / total;
            let residual = v * t2 / total;
            rule.standard_normal(sqrt(total), &kinks, |u| {
                let e = gain * u - den.eval(u);
                e * e + residual
            })?
        };
        acc += prior.epsilon * slab;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeModel<'a> {
    pub prior: &'a Prior,
    pub delta: f64,
    pub sigma0_2: f64,
    pub rule: &'a QuadratureRule,
}

impl SeModel<'_> {
    pub fn tau2(&self, sigma2: f64) -> f64 {
        self.sigma0_2 + sigma2 / self.delta
    }
}

/// One step of the recursion at iteration `t`; returns `(sigma2_next, tau2_t)`.
pub fn se_step<S: DenoiserSchedule + ?Sized>(
    model: &SeModel<'_>,
    sigma2_t: f64,
    schedule: &S,
    t: usize,
) -> Result<(f64, f64)> {
    if !(sigma2_t >= 0.0) {
        return Err(Error::InvalidArgument {
            name: "sigma2",
            reason: "mse must be nonnegative",
        });
    }
    let tau2 = model.tau2(sigma2_t);
    let tau = sqrt(tau2);
    let den = schedule.denoiser(t, tau)?;
    let next = channel_mse(&den, model.prior, tau, model.rule)?;
    Ok((next, tau2))
}

/// MSE and effective noise per iteration; both vectors have `T + 1` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeTrace {
    pub sigma2: Vec<f64>,
    pub tau2: Vec<f64>,
}

impl SeTrace {
    pub fn horizon(&self) -> usize {
        self.sigma2.len() - 1
    }

    pub fn taus(&self) -> Vec<f64> {
        self.tau2.iter().map(|t| sqrt(*t)).collect()
    }
}

pub fn se_run<S: DenoiserSchedule + ?Sized>(
    model: &SeModel<'_>,
    schedule: &S,
    iterations: usize,
) -> Result<SeTrace> {
    let mut sigma2 = Vec::with_capacity(iterations + 1);
    let mut tau2 = Vec::with_capacity(iterations + 1);
    sigma2.push(model.prior.second_moment());
    for t in 0..iterations {
        let (next, t2) = se_step(model, sigma2[t], schedule, t)?;
        tau2.push(t2);
        sigma2.push(next);
    }
    tau2.push(model.tau2(sigma2[iterations]));
    Ok(SeTrace { sigma2, tau2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub sigma2: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-12;
pub const DEFAULT_FIXED_POINT_MAX_ITER: usize = 10_000;

/// Iterates until `|sigma2_next - sigma2| < tol * max(sigma2, 1)`. Running
/// out of iterations or overflowing is reported through `converged = false`.
pub fn se_fixed_point<S: DenoiserSchedule + ?Sized>(
    model: &SeModel<'_>,
    schedule: &S,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument {
            name: "tol",
            reason: "tolerance must be positive",
        });
    }
    let mut sigma2 = model.prior.second_moment();
    for it in 0..max_iter {
        let next = match se_step(model, sigma2, schedule, it) {
            Ok((next, _)) => next,
            Err(Error::NonFiniteIntegrand { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if !next.is_finite() {
            return Ok(FixedPoint {
                sigma2: next,
                iterations: it + 1,
                converged: false,
            });
        }
        let step = abs(next - sigma2);
        sigma2 = next;
        if step < tol * sigma2.max(1.0) {
            return Ok(FixedPoint {
                sigma2,
                iterations: it + 1,
                converged: true,
            });
        }
    }
    Ok(FixedPoint {
        sigma2,
        iterations: max_iter,
        converged: false,
    })
}
