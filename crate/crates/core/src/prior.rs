use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sqrt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorKind {
    BernoulliGaussian,
}

/// Signal prior: `x0 = 0` with probability `1 - epsilon`, otherwise
/// `x0 ~ N(0, amp_variance)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub kind: PriorKind,
    pub epsilon: f64,
    pub amp_variance: f64,
}

impl Prior {
    /// `epsilon = 0` is accepted as the degenerate all-zero signal.
    pub fn bernoulli_gaussian(epsilon: f64, amp_variance: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument {
                name: "epsilon",
                reason: "signal density must lie in [0, 1]",
            });
        }
        if !(amp_variance >= 0.0 && amp_variance.is_finite()) {
            return Err(Error::InvalidArgument {
                name: "amp_variance",
                reason: "slab variance must be finite and nonnegative",
            });
        }
        Ok(Self {
            kind: PriorKind::BernoulliGaussian,
            epsilon,
            amp_variance,
        })
    }

    /// `E[x0^2]`.
    pub fn second_moment(&self) -> f64 {
        self.epsilon * self.amp_variance
    }

    /// Mixture components `(weight, std)` of `x0 + tau z`; zero-weight
    /// components are skipped.
    pub fn observation_components(&self, tau: f64) -> impl Iterator<Item = (f64, f64)> {
        let t2 = tau * tau;
        [
            (1.0 - self.epsilon, sqrt(t2)),
            (self.epsilon, sqrt(self.amp_variance + t2)),
        ]
        .into_iter()
        .filter(|(w, _)| *w > 0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let active = rng.random::<f64>() < self.epsilon;
        let g: f64 = rng.sample(StandardNormal);
        if active {
            sqrt(self.amp_variance) * g
        } else {
            0.0
        }
    }
}
