//! Scalar denoisers, their derivatives and the divergence-free wrapper.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{abs, ln, logistic};
use crate::prior::Prior;
use crate::quadrature::{gaussian_expectation, QuadratureRule};

/// Smallest `|1 - alpha|` accepted by the normalized divergence-free scale.
pub const DEFAULT_SINGULAR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Denoiser {
    /// `eta(u) = slope * u`; covers the identity and the zero map.
    Linear {
        slope: f64,
    },
    SoftThreshold {
        lambda: f64,
    },
    /// Posterior mean under the Bernoulli-Gaussian prior at channel variance `tau2`.
    MmseBg {
        prior: Prior,
        tau2: f64,
    },
    /// `eta(u) = scale * (base(u) - alpha * u)` with `alpha = E[base'(x0 + tau z)]`.
    DivergenceFree {
        base: Box<Denoiser>,
        alpha: f64,
        scale: f64,
        tau: f64,
    },
}

impl Denoiser {
    pub fn soft_threshold(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument {
                name: "lambda",
                reason: "soft threshold must be positive",
            });
        }
        Ok(Self::SoftThreshold { lambda })
    }

    pub fn mmse_bg(prior: Prior, tau2: f64) -> Result<Self> {
        if !(tau2 > 0.0 && tau2.is_finite()) {
            return Err(Error::InvalidArgument {
                name: "tau2",
                reason: "channel variance must be positive",
            });
        }
        Ok(Self::MmseBg { prior, tau2 })
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Self::Linear { slope } => slope * u,
            Self::SoftThreshold { lambda } => soft_threshold(u, *lambda),
            Self::MmseBg { prior, tau2 } => mmse_denoiser_bg(u, prior, *tau2).0,
            Self::DivergenceFree {
                base, alpha, scale, ..
            } => scale * (base.eval(u) - alpha * u),
        }
    }

    /// Derivative; at the soft-threshold kinks `|u| = lambda` it is 0.
    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            Self::Linear { slope } => *slope,
            Self::SoftThreshold { lambda } => {
                if abs(u) > *lambda {
                    1.0
                } else {
                    0.0
                }
            }
            Self::MmseBg { prior, tau2 } => mmse_denoiser_bg(u, prior, *tau2).1,
            Self::DivergenceFree {
                base, alpha, scale, ..
            } => scale * (base.derivative(u) - alpha),
        }
    }

    /// Value and derivative in one pass.
    pub fn eval_with_derivative(&self, u: f64) -> (f64, f64) {
        match self {
            Self::MmseBg { prior, tau2 } => mmse_denoiser_bg(u, prior, *tau2),
            Self::DivergenceFree {
                base, alpha, scale, ..
            } => {
                let (v, d) = base.eval_with_derivative(u);
                (scale * (v - alpha * u), scale * (d - alpha))
            }
            _ => (self.eval(u), self.derivative(u)),
        }
    }

    /// Points where the denoiser or its derivative is discontinuous.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            Self::SoftThreshold { lambda } => alloc::vec![-*lambda, *lambda],
            Self::DivergenceFree { base, .. } => base.kinks(),
            _ => Vec::new(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Linear { .. } => "linear".to_string(),
            Self::SoftThreshold { .. } => DenoiserKind::Soft.to_string(),
            Self::MmseBg { .. } => DenoiserKind::MmseBg.to_string(),
            Self::DivergenceFree { base, .. } => alloc::format!("df({})", base.name()),
        }
    }

    pub fn is_divergence_free(&self) -> bool {
        matches!(self, Self::DivergenceFree { .. })
    }
}

/// `sign(u) * max(|u| - lambda, 0)`.
#[inline]
pub fn soft_threshold(u: f64, lambda: f64) -> f64 {
    if u > lambda {
        u - lambda
    } else if u < -lambda {
        u + lambda
    } else {
        0.0
    }
}

/// Posterior mean `E[x0 | x0 + tau z = u]` and its derivative in `u`.
pub fn mmse_denoiser_bg(u: f64, prior: &Prior, tau2: f64) -> (f64, f64) {
    let eps = prior.epsilon;
    let v = prior.amp_variance;
    if eps <= 0.0 || v <= 0.0 {
        return (0.0, 0.0);
    }
    let shrink = v / (v + tau2);
    if eps >= 1.0 {
        return (shrink * u, shrink);
    }
    // log L_slab / L_spike = 0.5 ln(tau2/(v+tau2)) + 0.5 u^2 (1/tau2 - 1/(v+tau2))
    let curvature = 1.0 / tau2 - 1.0 / (v + tau2);
    let log_odds = ln(eps / (1.0 - eps)) + 0.5 * ln(tau2 / (v + tau2)) + 0.5 * u * u * curvature;
    let p = logistic(log_odds);
    let dp = p * (1.0 - p) * u * curvature;
    (p * shrink * u, shrink * (p + u * dp))
}

/// Scale applied by [`df_transform`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScaleMode {
    Fixed(f64),
    /// `1 / (1 - alpha)`, rejected when `|1 - alpha|` falls below the floor.
    Normalized {
        floor: f64,
    },
}

impl ScaleMode {
    pub const UNIT: Self = Self::Fixed(1.0);

    pub fn normalized() -> Self {
        Self::Normalized {
            floor: DEFAULT_SINGULAR_FLOOR,
        }
    }
}

impl fmt::Display for ScaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(s) => write!(f, "{s}"),
            Self::Normalized { .. } => f.write_str("normalized"),
        }
    }
}

impl FromStr for ScaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "normalized" => Ok(Self::normalized()),
            "unit" => Ok(Self::UNIT),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Self::Fixed)
                .ok_or(Error::InvalidArgument {
                    name: "scale",
                    reason: "expected `unit`, `normalized` or a number",
                }),
        }
    }
}

/// `E_{x0,z}[eta'(x0 + tau z)]`.
pub fn expected_derivative(
    den: &Denoiser,
    prior: &Prior,
    tau: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    gaussian_expectation(|u| den.derivative(u), prior, tau, rule, &den.kinks())
}

/// Wraps `base` so that its expected derivative under `(prior, tau)` vanishes.
pub fn df_transform(
    base: Denoiser,
    prior: &Prior,
    tau: f64,
    scale: ScaleMode,
    rule: &QuadratureRule,
) -> Result<Denoiser> {
    let alpha = expected_derivative(&base, prior, tau, rule)?;
    let scale = match scale {
        ScaleMode::Fixed(s) => s,
        ScaleMode::Normalized { floor } => {
            let gap = abs(1.0 - alpha);
            if gap < floor {
                return Err(Error::SingularNormalization { gap, floor });
            }
            1.0 / (1.0 - alpha)
        }
    };
    Ok(Denoiser::DivergenceFree {
        base: Box::new(base),
        alpha,
        scale,
        tau,
    })
}

/// Residual `E[eta'(x0 + tau z)]`; zero for a divergence-free function.
pub fn check_divergence_free(
    den: &Denoiser,
    prior: &Prior,
    tau: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    expected_derivative(den, prior, tau, rule)
}

/// Names accepted in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DenoiserKind {
    Soft,
    MmseBg,
    DfSoft,
    DfMmseBg,
}

impl DenoiserKind {
    pub fn base(self) -> Self {
        match self {
            Self::Soft | Self::DfSoft => Self::Soft,
            Self::MmseBg | Self::DfMmseBg => Self::MmseBg,
        }
    }

    pub fn divergence_free(self) -> Self {
        match self.base() {
            Self::Soft => Self::DfSoft,
            _ => Self::DfMmseBg,
        }
    }

    pub fn is_divergence_free(self) -> bool {
        matches!(self, Self::DfSoft | Self::DfMmseBg)
    }
}

impl fmt::Display for DenoiserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Soft => "soft",
            Self::MmseBg => "mmse_bg",
            Self::DfSoft => "df(soft)",
            Self::DfMmseBg => "df(mmse_bg)",
        })
    }
}

impl FromStr for DenoiserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "soft" => Ok(Self::Soft),
            "mmse_bg" => Ok(Self::MmseBg),
            "df(soft)" => Ok(Self::DfSoft),
            "df(mmse_bg)" => Ok(Self::DfMmseBg),
            other => Err(Error::UnknownDenoiser(other.to_string())),
        }
    }
}
