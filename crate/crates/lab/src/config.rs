//! Flat, typed experiment configuration read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sparsedyn_core::quadrature::{DEFAULT_ORDER, DEFAULT_TOLERANCE};
use sparsedyn_core::{Algorithm, DenoiserKind, DenoiserRule, Prior, QuadratureRule, ScaleMode};

use crate::error::{LabError, Result};

pub const DEFAULT_GFA_REPLICATES: usize = 8;

/// Serde adapter for types that round-trip through `Display` / `FromStr`.
mod text {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(value: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(value)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Text(t) => t,
            Raw::Number(n) => n.to_string(),
        };
        text.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmChoice {
    Ist,
    Amp,
    Oamp,
}

impl From<AlgorithmChoice> for Algorithm {
    fn from(a: AlgorithmChoice) -> Self {
        match a {
            AlgorithmChoice::Ist => Algorithm::Ist,
            AlgorithmChoice::Amp => Algorithm::Amp,
            AlgorithmChoice::Oamp => Algorithm::Oamp,
        }
    }
}

impl FromStr for AlgorithmChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ist" => Ok(Self::Ist),
            "amp" => Ok(Self::Amp),
            "oamp" => Ok(Self::Oamp),
            other => Err(format!(
                "unknown algorithm `{other}` (expected ist, amp or oamp)"
            )),
        }
    }
}

impl fmt::Display for AlgorithmChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ist => "ist",
            Self::Amp => "amp",
            Self::Oamp => "oamp",
        })
    }
}

/// Which prediction supplies the `tau_t` at which each denoiser is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauChoice {
    Se,
    Gfa,
    Empirical,
}

impl FromStr for TauChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "se" => Ok(Self::Se),
            "gfa" => Ok(Self::Gfa),
            "empirical" => Ok(Self::Empirical),
            other => Err(format!(
                "unknown tau source `{other}` (expected se, gfa or empirical)"
            )),
        }
    }
}

impl fmt::Display for TauChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Se => "se",
            Self::Gfa => "gfa",
            Self::Empirical => "empirical",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureChoice {
    Adaptive,
    GaussHermite,
}

impl FromStr for QuadratureChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adaptive" => Ok(Self::Adaptive),
            "gauss_hermite" => Ok(Self::GaussHermite),
            other => Err(format!(
                "unknown quadrature `{other}` (expected adaptive or gauss_hermite)"
            )),
        }
    }
}

/// One experiment. Every field has a default, so a file only needs the
/// values it changes; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub delta: f64,
    pub sigma0_2: f64,
    pub epsilon: f64,
    pub amp_variance: f64,
    pub algorithm: AlgorithmChoice,
    #[serde(with = "text")]
    pub denoiser: DenoiserKind,
    pub kappa: f64,
    #[serde(with = "text")]
    pub scale: ScaleMode,
    pub tau_source: TauChoice,
    /// Number of updates `T`; reports have `T + 1` rows per source.
    pub iterations: usize,
    pub trials: usize,
    pub seed: u64,
    pub mc_samples: usize,
    pub mc_chunks: usize,
    /// Independent runs of the order-parameter recursion; the reported track
    /// is their mean and its error the replicate spread over `sqrt(K)`.
    pub gfa_replicates: usize,
    pub skip_gfa: bool,
    pub quadrature: QuadratureChoice,
    pub quadrature_order: usize,
    pub quadrature_tolerance: f64,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    /// Acceptance threshold on `max_t |EMP - SE| / SE`.
    pub max_rel_gap_se: Option<f64>,
    /// Acceptance threshold on `max_t |EMP - GFA| / combined stderr`.
    pub max_gfa_z: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 4096,
            delta: 0.5,
            sigma0_2: 0.01,
            epsilon: 0.1,
            amp_variance: 1.0,
            algorithm: AlgorithmChoice::Oamp,
            denoiser: DenoiserKind::DfMmseBg,
            kappa: 1.5,
            scale: ScaleMode::normalized(),
            tau_source: TauChoice::Se,
            iterations: 10,
            trials: 100,
            seed: 1,
            mc_samples: sparsedyn_core::gfa::DEFAULT_SAMPLES,
            mc_chunks: sparsedyn_core::gfa::DEFAULT_CHUNKS,
            gfa_replicates: DEFAULT_GFA_REPLICATES,
            skip_gfa: false,
            quadrature: QuadratureChoice::Adaptive,
            quadrature_order: DEFAULT_ORDER,
            quadrature_tolerance: DEFAULT_TOLERANCE,
            csv: None,
            json: None,
            max_rel_gap_se: None,
            max_gfa_z: None,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> LabError {
    LabError::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Checks every numeric range; the error names the first offending field.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(invalid("delta", "must lie in (0, 1]"));
        }
        if sparsedyn_core::linear_model::measurement_count(self.n, self.delta).is_err() {
            return Err(invalid("n", "round(delta * n) must be at least 1"));
        }
        if !(self.sigma0_2 >= 0.0 && self.sigma0_2.is_finite()) {
            return Err(invalid("sigma0_2", "must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid("epsilon", "must lie in [0, 1]"));
        }
        if !(self.amp_variance >= 0.0 && self.amp_variance.is_finite()) {
            return Err(invalid("amp_variance", "must be finite and nonnegative"));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(invalid("kappa", "must be positive"));
        }
        if let ScaleMode::Fixed(s) = self.scale {
            if !s.is_finite() {
                return Err(invalid("scale", "must be finite"));
            }
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if self.mc_samples < sparsedyn_core::gfa::MIN_SAMPLES {
            return Err(invalid("mc_samples", "must be at least 1000"));
        }
        if self.mc_chunks == 0 || self.mc_chunks > self.mc_samples {
            return Err(invalid("mc_chunks", "must lie between 1 and mc_samples"));
        }
        if self.gfa_replicates == 0 {
            return Err(invalid("gfa_replicates", "must be at least 1"));
        }
        if self.quadrature_order < 2 {
            return Err(invalid("quadrature_order", "must be at least 2"));
        }
        if !(self.quadrature_tolerance > 0.0 && self.quadrature_tolerance < 1.0) {
            return Err(invalid("quadrature_tolerance", "must lie in (0, 1)"));
        }
        if let Some(g) = self.max_rel_gap_se {
            if !(g >= 0.0) {
                return Err(invalid("max_rel_gap_se", "must be nonnegative"));
            }
        }
        if let Some(z) = self.max_gfa_z {
            if !(z >= 0.0) {
                return Err(invalid("max_gfa_z", "must be nonnegative"));
            }
        }
        if self.tau_source == TauChoice::Gfa && self.skip_gfa {
            return Err(invalid(
                "tau_source",
                "`gfa` needs the GFA run; unset skip_gfa",
            ));
        }
        if self.tau_source == TauChoice::Gfa && self.algorithm == AlgorithmChoice::Amp {
            return Err(invalid(
                "tau_source",
                "`gfa` describes IST/OAMP and cannot drive AMP",
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form; output paths are excluded so
    /// that moving artifacts does not change the identity of a run.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.csv = None;
        canonical.json = None;
        let bytes = serde_json::to_vec(&canonical).expect("configuration serializes to JSON");
        format!("{:x}", Sha256::digest(&bytes))
    }

    /// `M / N` with `M = round_half_up(delta * n)`, the ratio every theory
    /// track uses so that it matches the generated instances.
    pub fn effective_delta(&self) -> f64 {
        match sparsedyn_core::linear_model::measurement_count(self.n, self.delta) {
            Ok(m) => m as f64 / self.n as f64,
            Err(_) => self.delta,
        }
    }

    pub fn prior(&self) -> Result<Prior> {
        Prior::bernoulli_gaussian(self.epsilon, self.amp_variance)
            .map_err(|e| invalid("epsilon", e.to_string()))
    }

    pub fn quadrature_rule(&self) -> Result<QuadratureRule> {
        match self.quadrature {
            QuadratureChoice::Adaptive => {
                QuadratureRule::adaptive(self.quadrature_order, self.quadrature_tolerance)
            }
            QuadratureChoice::GaussHermite => QuadratureRule::gauss_hermite(self.quadrature_order),
        }
        .map_err(|e| invalid("quadrature_order", e.to_string()))
    }

    /// The rule producing the denoiser actually applied at each update. OAMP
    /// always applies the divergence-free wrapper of the configured base.
    pub fn applied_rule(&self) -> Result<DenoiserRule> {
        let kind = match self.algorithm {
            AlgorithmChoice::Oamp => self.denoiser.divergence_free(),
            _ => self.denoiser,
        };
        self.rule_for(kind)
    }

    /// The base rule handed to OAMP, which wraps it itself.
    pub fn base_rule(&self) -> Result<DenoiserRule> {
        self.rule_for(self.denoiser.base())
    }

    fn rule_for(&self, kind: DenoiserKind) -> Result<DenoiserRule> {
        Ok(DenoiserRule::new(kind, self.prior()?)
            .with_kappa(self.kappa)
            .with_scale(self.scale)
            .with_rule(self.quadrature_rule()?))
    }

    /// Sets one sweepable parameter by name.
    pub fn set_axis(&mut self, axis: SweepAxis, value: f64) {
        match axis {
            SweepAxis::Delta => self.delta = value,
            SweepAxis::Epsilon => self.epsilon = value,
            SweepAxis::Sigma0_2 => self.sigma0_2 = value,
            SweepAxis::Kappa => self.kappa = value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Delta,
    Epsilon,
    #[serde(rename = "sigma0_2")]
    Sigma0_2,
    Kappa,
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "delta" => Ok(Self::Delta),
            "epsilon" => Ok(Self::Epsilon),
            "sigma0_2" => Ok(Self::Sigma0_2),
            "kappa" => Ok(Self::Kappa),
            other => Err(format!(
                "unknown sweep axis `{other}` (expected delta, epsilon, sigma0_2 or kappa)"
            )),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Delta => "delta",
            Self::Epsilon => "epsilon",
            Self::Sigma0_2 => "sigma0_2",
            Self::Kappa => "kappa",
        })
    }
}
