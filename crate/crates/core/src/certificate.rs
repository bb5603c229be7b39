//! Mode-agnostic certificates and learner settings.

use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::nonparametric::{
    learn_rkhs_samples, margin_rkhs, Formulation, KernelSet, RkhsCertificate, RkhsOptions, StateAnchors,
    DEFAULT_SPECTRAL_CUTOFF, DEFAULT_STORAGE_WEIGHT,
};
use crate::parametric::{learn_parametric_samples, margin, ParametricCertificate, DEFAULT_EPSILON, DEFAULT_ETA};
use crate::sampling::{flatten_training, read_string, write_string, Dataset, Sample};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Parametric,
    Rkhs,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Parametric => "parametric",
            Mode::Rkhs => "rkhs",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parametric" => Ok(Mode::Parametric),
            "rkhs" => Ok(Mode::Rkhs),
            other => Err(Error::InvalidInput(format!("unknown mode `{other}` (expected parametric or rkhs)"))),
        }
    }
}

/// A learned certificate of either kind. The JSON form is the kind's own
/// document, told apart by its `"type"` field.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Certificate {
    Parametric(ParametricCertificate),
    Rkhs(RkhsCertificate),
}

impl<'de> Deserialize<'de> for Certificate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match v.get("type").and_then(|t| t.as_str()) {
            Some("parametric") => ParametricCertificate::deserialize(v).map(Certificate::Parametric).map_err(D::Error::custom),
            Some("rkhs") => RkhsCertificate::deserialize(v).map(Certificate::Rkhs).map_err(D::Error::custom),
            Some(other) => Err(D::Error::custom(format!("unknown certificate type {other:?}"))),
            None => Err(D::Error::custom("certificate has no \"type\" field")),
        }
    }
}

impl Certificate {
    pub fn mode(&self) -> Mode {
        match self {
            Certificate::Parametric(_) => Mode::Parametric,
            Certificate::Rkhs(_) => Mode::Rkhs,
        }
    }

    pub fn rho(&self) -> f64 {
        match self {
            Certificate::Parametric(c) => c.rho,
            Certificate::Rkhs(c) => c.rho,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Certificate::Parametric(c) => c.alpha,
            Certificate::Rkhs(c) => c.alpha,
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Certificate::Parametric(c) => c.lambda,
            Certificate::Rkhs(c) => c.lambda,
        }
    }

    pub fn objective(&self) -> Result<f64> {
        match self {
            Certificate::Parametric(c) => Ok(c.objective()),
            Certificate::Rkhs(c) => c.objective(),
        }
    }

    /// `(‖Q‖_F, ‖P‖_F)` or `(‖Π‖_HS, ‖P‖_HS)`.
    pub fn norms(&self) -> Result<(f64, f64)> {
        match self {
            Certificate::Parametric(c) => Ok((c.q.frobenius_norm(), c.p.frobenius_norm())),
            Certificate::Rkhs(c) => c.hs_norms(),
        }
    }

    /// Sum of the two norms, the scale that margins are reported in.
    pub fn normalizer(&self) -> Result<f64> {
        self.norms().map(|(a, b)| a + b)
    }

    /// `s(z) + V(x) − V(x⁺)` on one transition.
    pub fn margin(&self, sample: &Sample) -> f64 {
        match self {
            Certificate::Parametric(c) => margin(c, sample),
            Certificate::Rkhs(c) => margin_rkhs(c, sample),
        }
    }

    /// Same certificate with its storage, supply and margin multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            Certificate::Parametric(p) => Certificate::Parametric(ParametricCertificate {
                q: p.q.scaled(c),
                p: p.p.scaled(c),
                rho: p.rho * c,
                ..p.clone()
            }),
            Certificate::Rkhs(r) => Certificate::Rkhs(r.scaled(c)),
        }
    }

    /// `(n_x, n_z)` the certificate accepts.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Certificate::Parametric(c) => (c.n_x(), c.n_y + c.n_u),
            Certificate::Rkhs(c) => (
                c.anchors.x.first().map_or(0, Vec::len),
                c.anchors.z.first().map_or(0, Vec::len),
            ),
        }
    }

    pub fn check_sample(&self, sample: &Sample) -> Result<()> {
        let (n_x, n_z) = self.dims();
        if sample.x.len() != n_x || sample.x_next.len() != n_x || sample.z.len() != n_z {
            return Err(Error::InvalidInput(format!(
                "sample (trajectory {}, t = {}) has n_x = {}, n_z = {}; the certificate expects n_x = {n_x}, n_z = {n_z}",
                sample.traj,
                sample.t,
                sample.x.len(),
                sample.z.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("certificate: {e}")))
    }
}

pub fn save_certificate(cert: &Certificate, path: &Path) -> Result<()> {
    write_string(path, &cert.to_json())
}

pub fn load_certificate(path: &Path) -> Result<Certificate> {
    let text = read_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { file: path.to_path_buf(), line: e.line(), message: e.to_string() })
}

/// Settings of either learner. `epsilon` is the `P ⪰ εI` floor for the
/// parametric program and the weight on `ĉĉᵀ` for the RKHS program; when
/// absent each mode uses its own default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub mode: Mode,
    pub lambda: f64,
    pub epsilon: Option<f64>,
    pub eta: f64,
    pub ridge: Option<f64>,
    pub kernels: Option<KernelSet>,
    pub spectral_cutoff: f64,
    pub formulation: Formulation,
    pub anchors: StateAnchors,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            mode: Mode::Parametric,
            lambda: 1.0,
            epsilon: None,
            eta: DEFAULT_ETA,
            ridge: None,
            kernels: None,
            spectral_cutoff: DEFAULT_SPECTRAL_CUTOFF,
            formulation: Formulation::Reduced,
            anchors: StateAnchors::WithTerminals,
        }
    }
}

impl LearnConfig {
    pub fn with_lambda(&self, lambda: f64) -> Self {
        LearnConfig { lambda, ..self.clone() }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(match self.mode {
            Mode::Parametric => DEFAULT_EPSILON,
            Mode::Rkhs => DEFAULT_STORAGE_WEIGHT,
        })
    }

    pub fn rkhs_options(&self) -> RkhsOptions {
        RkhsOptions {
            kernels: self.kernels,
            lambda: self.lambda,
            eta: self.eta,
            ridge: self.ridge,
            storage_weight: self.epsilon(),
            spectral_cutoff: self.spectral_cutoff,
            formulation: self.formulation,
            anchors: self.anchors,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidInput(format!("lambda must be > 0 (got {})", self.lambda)));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::InvalidInput(format!("eta must be ≥ 0 (got {})", self.eta)));
        }
        let eps = self.epsilon();
        let eps_ok = match self.mode {
            Mode::Parametric => eps > 0.0,
            Mode::Rkhs => eps >= 0.0,
        };
        if !(eps.is_finite() && eps_ok) {
            return Err(Error::InvalidInput(format!("epsilon out of range for {} mode (got {eps})", self.mode)));
        }
        if let Some(r) = self.ridge {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidInput(format!("ridge must be ≥ 0 (got {r})")));
            }
        }
        if let Some(k) = &self.kernels {
            k.validate()?;
        }
        if self.mode == Mode::Rkhs {
            self.rkhs_options().program_options().validate()?;
        }
        Ok(())
    }

    pub fn learn_samples(&self, samples: &[Sample], cfg: &SolverConfig) -> Result<Certificate> {
        self.validate()?;
        match self.mode {
            Mode::Parametric => {
                learn_parametric_samples(samples, self.lambda, self.epsilon(), self.eta, cfg).map(Certificate::Parametric)
            }
            Mode::Rkhs => learn_rkhs_samples(samples, &self.rkhs_options(), cfg).map(Certificate::Rkhs),
        }
    }

    /// Learns from the training split of `dataset`.
    pub fn learn(&self, dataset: &Dataset, cfg: &SolverConfig) -> Result<Certificate> {
        self.learn_samples(&flatten_training(dataset), cfg)
    }
}
