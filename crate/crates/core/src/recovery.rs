//! Finite-N iterations: IST, AMP and OAMP with the matched filter `W = A^T`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::denoiser::{df_transform, Denoiser, ScaleMode};
use crate::error::{Error, Result};
use crate::linear_model::{dot, ProblemInstance};
use crate::math::sqrt;
use crate::quadrature::QuadratureRule;
use crate::schedule::DenoiserSchedule;

/// Iterations stop when the mse exceeds this multiple of the initial mse.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    Ist,
    Amp,
    Oamp,
}

/// Where the `tau_t` handed to the schedule comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TauSource {
    /// Precomputed prediction (state evolution or the order-parameter engine).
    Given(Vec<f64>),
    /// Residual energy `sqrt(||z||^2 / M)` at the current iterate.
    Empirical,
}

impl TauSource {
    fn tau(&self, t: usize, residual_energy: f64) -> Result<f64> {
        match self {
            Self::Given(taus) => taus.get(t).copied().ok_or(Error::ScheduleExhausted(t)),
            Self::Empirical => Ok(sqrt(residual_energy)),
        }
    }
}

/// Per-iteration statistics of one run. Index `t` is logged before the
/// `t`-th update, so `T` updates give `T + 1` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub algorithm: Algorithm,
    /// `||x0 - x^(t)||^2 / N`.
    pub mse: Vec<f64>,
    /// `x^(t) . x0 / N`.
    pub overlap: Vec<f64>,
    /// `||x^(t)||^2 / N`.
    pub second_moment: Vec<f64>,
    /// `||z^(t)||^2 / M`.
    pub residual_energy: Vec<f64>,
    /// `<eta_t'>` used in the AMP correction; empty for IST and OAMP.
    pub onsager: Vec<f64>,
    /// Standard deviation of `eta_t'` over components, alongside `onsager`.
    pub onsager_std: Vec<f64>,
    /// `||x0||^2 / N`.
    pub signal_power: f64,
    /// The denoisers actually applied, one per update.
    pub denoisers: Vec<Denoiser>,
}

impl TrajectoryRecord {
    pub fn iterations(&self) -> usize {
        self.denoisers.len()
    }
}

pub fn run_ist<S: DenoiserSchedule + ?Sized>(
    inst: &ProblemInstance,
    schedule: &S,
    tau: &TauSource,
    iterations: usize,
) -> Result<TrajectoryRecord> {
    iterate(inst, schedule, tau, iterations, Algorithm::Ist)
}

/// AMP with `x^(0) = 0`, `z^(0) = y` and the Onsager term
/// `z^(t-1) <eta'_{t-1}> / delta` from `t = 1` on.
pub fn run_amp<S: DenoiserSchedule + ?Sized>(
    inst: &ProblemInstance,
    schedule: &S,
    tau: &TauSource,
    iterations: usize,
) -> Result<TrajectoryRecord> {
    iterate(inst, schedule, tau, iterations, Algorithm::Amp)
}

/// OAMP: each base denoiser is made divergence-free at its iteration's `tau_t`.
pub fn run_oamp<S: DenoiserSchedule + ?Sized>(
    inst: &ProblemInstance,
    base: &S,
    tau: &TauSource,
    scale: ScaleMode,
    rule: &QuadratureRule,
    iterations: usize,
) -> Result<TrajectoryRecord> {
    let prior = *inst.prior();
    let wrapped = |t: usize, tau: f64| -> Result<Denoiser> {
        df_transform(base.denoiser(t, tau)?, &prior, tau, scale, rule)
    };
    iterate(inst, &wrapped, tau, iterations, Algorithm::Oamp)
}

fn iterate<S: DenoiserSchedule + ?Sized>(
    inst: &ProblemInstance,
    schedule: &S,
    tau_source: &TauSource,
    iterations: usize,
    algorithm: Algorithm,
) -> Result<TrajectoryRecord> {
    let (m, n) = (inst.m(), inst.n());
    let a = inst.a();
    let x0 = inst.x0();
    let y = inst.y();
    let nf = n as f64;
    let signal_power = inst.signal_power();

    let mut record = TrajectoryRecord {
        algorithm,
        mse: Vec::with_capacity(iterations + 1),
        overlap: Vec::with_capacity(iterations + 1),
        second_moment: Vec::with_capacity(iterations + 1),
        residual_energy: Vec::with_capacity(iterations + 1),
        onsager: Vec::new(),
        onsager_std: Vec::new(),
        signal_power,
        denoisers: Vec::with_capacity(iterations),
    };

    let mut x = alloc::vec![0.0; n];
    let mut z = y.to_vec();
    let mut ax = alloc::vec![0.0; m];
    let mut u = alloc::vec![0.0; n];
    let mut err = alloc::vec![0.0; n];

    for t in 0..=iterations {
        for ((ei, a), b) in err.iter_mut().zip(x0).zip(&x) {
            *ei = a - b;
        }
        let mse = dot(&err, &err) / nf;
        if !mse.is_finite()
            || (t > 0 && record.mse[0] > 0.0 && mse > DIVERGENCE_FACTOR * record.mse[0])
        {
            return Err(Error::Diverged { iteration: t, mse });
        }
        let energy = dot(&z, &z) / m as f64;
        record.mse.push(mse);
        record.overlap.push(dot(&x, x0) / nf);
        record.second_moment.push(dot(&x, &x) / nf);
        record.residual_energy.push(energy);
        if t == iterations {
            break;
        }

        a.mul_transpose_vec(&z, &mut u);
        for (ui, xi) in u.iter_mut().zip(&x) {
            *ui += xi;
        }
        let tau = tau_source.tau(t, energy)?;
        let den = schedule.denoiser(t, tau)?;
        let (mut div, mut div2) = (0.0, 0.0);
        for (xi, ui) in x.iter_mut().zip(&u) {
            if algorithm == Algorithm::Amp {
                let (v, d) = den.eval_with_derivative(*ui);
                *xi = v;
                div += d;
                div2 += d * d;
            } else {
                *xi = den.eval(*ui);
            }
        }
        record.denoisers.push(den);

        a.mul_vec(&x, &mut ax);
        if algorithm == Algorithm::Amp {
            let b = div / nf;
            record.onsager.push(b);
            record.onsager_std.push(sqrt((div2 / nf - b * b).max(0.0)));
            let c = b / inst.delta();
            for ((zi, yi), axi) in z.iter_mut().zip(y).zip(&ax) {
                *zi = yi - axi + c * *zi;
            }
        } else {
            for ((zi, yi), axi) in z.iter_mut().zip(y).zip(&ax) {
                *zi = yi - axi;
            }
        }
    }
    Ok(record)
}

/// Recomputes the error recursion `h^(t) = (I - A^T A) q^(t) + A^T omega`,
/// `q^(t+1) = eta_t(x0 + h^(t)) - x0` from `q^(0) = -x0` with the denoisers
/// recorded in `trajectory`, returning `(||h^(t)||^2 / N, ||q^(t)||^2 / N)`.
///
/// This describes IST and OAMP; AMP's Onsager term is not part of it.
pub fn error_recursion_view(
    inst: &ProblemInstance,
    trajectory: &TrajectoryRecord,
) -> Vec<(f64, f64)> {
    let (m, n) = (inst.m(), inst.n());
    let a = inst.a();
    let x0 = inst.x0();
    let omega = inst.omega();
    let nf = n as f64;
    let mut q: Vec<f64> = x0.iter().map(|v| -v).collect();
    let mut r = alloc::vec![0.0; m];
    let mut h = alloc::vec![0.0; n];
    let mut out = Vec::with_capacity(trajectory.iterations() + 1);
    for t in 0..=trajectory.iterations() {
        // h = q + A^T (omega - A q)
        a.mul_vec(&q, &mut r);
        for (ri, wi) in r.iter_mut().zip(omega) {
            *ri = wi - *ri;
        }
        a.mul_transpose_vec(&r, &mut h);
        for (hi, qi) in h.iter_mut().zip(&q) {
            *hi += qi;
        }
        out.push((dot(&h, &h) / nf, dot(&q, &q) / nf));
        if let Some(den) = trajectory.denoisers.get(t) {
            for ((qi, hi), xi) in q.iter_mut().zip(&h).zip(x0) {
                *qi = den.eval(xi + hi) - xi;
            }
        }
    }
    out
}
