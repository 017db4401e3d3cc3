//! Denoiser schedules: which `eta_t` an algorithm or theory applies at iteration `t`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::denoiser::{df_transform, Denoiser, DenoiserKind, ScaleMode};
use crate::error::{Error, Result};
use crate::prior::Prior;
use crate::quadrature::QuadratureRule;

/// Lower bound on the channel standard deviation handed to rule-built denoisers.
const MIN_TAU: f64 = 1e-150;

pub trait DenoiserSchedule {
    /// Denoiser for iteration `t` when the effective channel has standard deviation `tau`.
    fn denoiser(&self, t: usize, tau: f64) -> Result<Denoiser>;
}

impl<F> DenoiserSchedule for F
where
    F: Fn(usize, f64) -> Result<Denoiser>,
{
    fn denoiser(&self, t: usize, tau: f64) -> Result<Denoiser> {
        self(t, tau)
    }
}

/// Pre-built list; `tau` is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSchedule(pub Vec<Denoiser>);

impl DenoiserSchedule for FixedSchedule {
    fn denoiser(&self, t: usize, _tau: f64) -> Result<Denoiser> {
        self.0.get(t).cloned().ok_or(Error::ScheduleExhausted(t))
    }
}

/// Builds `eta_t` from the current `tau_t`: soft thresholds use
/// `lambda = kappa * tau`, the MMSE denoiser uses `tau^2`, and the `df(...)`
/// kinds wrap the base with [`df_transform`] at the same `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserRule {
    pub kind: DenoiserKind,
    pub prior: Prior,
    pub kappa: f64,
    pub scale: ScaleMode,
    pub rule: QuadratureRule,
}

impl DenoiserRule {
    pub fn new(kind: DenoiserKind, prior: Prior) -> Self {
        Self {
            kind,
            prior,
            kappa: 1.5,
            scale: ScaleMode::normalized(),
            rule: QuadratureRule::default(),
        }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_scale(mut self, scale: ScaleMode) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_rule(mut self, rule: QuadratureRule) -> Self {
        self.rule = rule;
        self
    }

    /// Same rule with the kind switched to its divergence-free wrapper.
    pub fn divergence_free(&self) -> Self {
        Self {
            kind: self.kind.divergence_free(),
            ..self.clone()
        }
    }

    pub fn base_denoiser(&self, tau: f64) -> Result<Denoiser> {
        let tau = tau.max(MIN_TAU);
        match self.kind.base() {
            DenoiserKind::Soft => Denoiser::soft_threshold(self.kappa * tau),
            _ => Denoiser::mmse_bg(self.prior, tau * tau),
        }
    }
}

impl DenoiserSchedule for DenoiserRule {
    fn denoiser(&self, _t: usize, tau: f64) -> Result<Denoiser> {
        let base = self.base_denoiser(tau)?;
        if self.kind.is_divergence_free() {
            df_transform(base, &self.prior, tau, self.scale, &self.rule)
        } else {
            Ok(base)
        }
    }
}

/// Realizes a schedule along a given `tau` sequence.
pub fn realize<S: DenoiserSchedule + ?Sized>(schedule: &S, taus: &[f64]) -> Result<FixedSchedule> {
    taus.iter()
        .enumerate()
        .map(|(t, tau)| schedule.denoiser(t, *tau))
        .collect::<Result<Vec<_>>>()
        .map(FixedSchedule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_builds_expected_kinds() {
        let prior = Prior::bernoulli_gaussian(0.1, 1.0).unwrap();
        let soft = DenoiserRule::new(DenoiserKind::Soft, prior).with_kappa(2.0);
        assert_eq!(
            soft.denoiser(0, 0.5).unwrap(),
            Denoiser::SoftThreshold { lambda: 1.0 }
        );
        let df = soft.divergence_free();
        let d = df.denoiser(3, 0.5).unwrap();
        assert_eq!(d.name(), "df(soft)");
        let fixed = realize(&df, &[0.5, 0.25]).unwrap();
        assert_eq!(fixed.denoiser(0, 99.0).unwrap(), d);
        assert!(matches!(
            fixed.denoiser(2, 1.0),
            Err(Error::ScheduleExhausted(2))
        ));
    }

    #[test]
    fn closures_are_schedules() {
        let s = |_t: usize, _tau: f64| Ok(Denoiser::Linear { slope: 0.0 });
        assert_eq!(s.denoiser(5, 1.0).unwrap(), Denoiser::Linear { slope: 0.0 });
    }
}
