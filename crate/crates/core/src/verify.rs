//! Held-out verification, λ sweeps, the covering-number generalization
//! bound and CSV/JSON report emission.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certificate::{Certificate, LearnConfig, Mode};
use crate::error::{Error, Result};
use crate::sampling::{flatten_training, fmt_f64, write_string, Dataset, Sample};
use crate::solver::SolverConfig;

/// Default largest violation rate at which a verification passes.
pub const DEFAULT_VIOLATION_THRESHOLD: f64 = 0.1;

pub const VERIFY_CSV_HEADER: &str = "sample_index,raw_margin,normalized_margin";
pub const SWEEP_CSV_HEADER: &str = "lambda,objective,rho,alpha,norm_Q_or_Pi,norm_P";

/// Margins of a certificate on held-out samples, divided by the sum of its
/// two parameter norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub mode: Mode,
    pub raw_margins: Vec<f64>,
    pub per_sample_margins: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub violation_rate: f64,
    pub normalizer: f64,
    pub rho_train: f64,
    pub rho_train_normalized: f64,
}

impl VerificationReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.violation_rate <= threshold
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(VERIFY_CSV_HEADER);
        out.push('\n');
        for (i, (r, n)) in self.raw_margins.iter().zip(&self.per_sample_margins).enumerate() {
            out.push_str(&format!("{i},{},{}\n", fmt_f64(*r), fmt_f64(*n)));
        }
        out
    }
}

/// `(mean, population std, fraction < 0)`.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let viol = values.iter().filter(|v| **v < 0.0).count() as f64 / n;
    (mean, var.sqrt(), viol)
}

fn margins(cert: &Certificate, samples: &[Sample]) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        samples.par_iter().map(|s| cert.margin(s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        samples.iter().map(|s| cert.margin(s)).collect()
    }
}

/// Evaluates `cert` on `samples`. A certificate with both norms zero has
/// zero margins and is reported unnormalized.
pub fn verify(cert: &Certificate, samples: &[Sample]) -> Result<VerificationReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no test samples to verify on".into()));
    }
    samples.iter().try_for_each(|s| cert.check_sample(s))?;
    let raw = margins(cert, samples);
    let normalizer = cert.normalizer()?;
    let scale = if normalizer > 0.0 { normalizer } else { 1.0 };
    let normalized: Vec<f64> = raw.iter().map(|m| m / scale).collect();
    let (mean, std, violation_rate) = summarize(&normalized);
    Ok(VerificationReport {
        mode: cert.mode(),
        raw_margins: raw,
        per_sample_margins: normalized,
        mean,
        std,
        violation_rate,
        normalizer,
        rho_train: cert.rho(),
        rho_train_normalized: cert.rho() / scale,
    })
}

/// Evaluates `cert` on the test split of `dataset`.
pub fn verify_dataset(cert: &Certificate, dataset: &Dataset) -> Result<VerificationReport> {
    verify(cert, &dataset.test_samples())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub lambda: f64,
    pub message: String,
}

/// Per-λ results of independent learns on the same data. Entries of failed
/// learns are `None` and the reason is kept in `failures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub mode: Mode,
    pub lambdas: Vec<f64>,
    pub objectives: Vec<Option<f64>>,
    pub rhos: Vec<Option<f64>>,
    pub alphas: Vec<Option<f64>>,
    pub norm_q_or_pi: Vec<Option<f64>>,
    pub norm_p: Vec<Option<f64>>,
    pub failures: Vec<SweepFailure>,
}

/// Whether `values` never drops (`sign = 1`) or never rises (`sign = −1`)
/// by more than `slack`, skipping missing entries.
fn monotone(values: &[Option<f64>], sign: f64, slack: f64) -> bool {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    present.windows(2).all(|w| sign * (w[1] - w[0]) >= -slack)
}

impl SweepResult {
    pub fn n_succeeded(&self) -> usize {
        self.objectives.iter().filter(|o| o.is_some()).count()
    }

    pub fn objectives_nondecreasing(&self, slack: f64) -> bool {
        monotone(&self.objectives, 1.0, slack)
    }

    pub fn alphas_nonincreasing(&self, slack: f64) -> bool {
        monotone(&self.alphas, -1.0, slack)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serializes") + "\n"
    }

    /// Failed learns leave their cells empty.
    pub fn to_csv(&self) -> String {
        let cell = |v: &Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for k in 0..self.lambdas.len() {
            let row = [
                fmt_f64(self.lambdas[k]),
                cell(&self.objectives[k]),
                cell(&self.rhos[k]),
                cell(&self.alphas[k]),
                cell(&self.norm_q_or_pi[k]),
                cell(&self.norm_p[k]),
            ];
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidInput(format!("lambda grid needs at least 2 points (got {})", grid.len())));
    }
    if let Some(bad) = grid.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(Error::InvalidInput(format!("lambda grid entries must be > 0 (got {bad})")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("lambda grid must be strictly increasing".into()));
    }
    Ok(())
}

type SweepPoint = Result<(f64, f64, f64, f64, f64)>;

fn sweep_point(samples: &[Sample], learn: &LearnConfig, lambda: f64, cfg: &SolverConfig) -> SweepPoint {
    let cert = learn.with_lambda(lambda).learn_samples(samples, cfg)?;
    let (nq, np) = cert.norms()?;
    Ok((cert.objective()?, cert.rho(), cert.alpha(), nq, np))
}

/// Learns once per λ on the training split of `dataset`. Invalid settings
/// abort the sweep; failures of individual learns are recorded.
pub fn sweep_lambda(dataset: &Dataset, learn: &LearnConfig, grid: &[f64], cfg: &SolverConfig) -> Result<SweepResult> {
    validate_grid(grid)?;
    grid.iter().try_for_each(|l| learn.with_lambda(*l).validate())?;
    cfg.validate()?;
    let samples = flatten_training(dataset);
    #[cfg(feature = "parallel")]
    let points: Vec<SweepPoint> = {
        use rayon::prelude::*;
        grid.par_iter().map(|l| sweep_point(&samples, learn, *l, cfg)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let points: Vec<SweepPoint> = grid.iter().map(|l| sweep_point(&samples, learn, *l, cfg)).collect();

    let mut out = SweepResult {
        mode: learn.mode,
        lambdas: grid.to_vec(),
        objectives: Vec::new(),
        rhos: Vec::new(),
        alphas: Vec::new(),
        norm_q_or_pi: Vec::new(),
        norm_p: Vec::new(),
        failures: Vec::new(),
    };
    for (lambda, point) in grid.iter().zip(points) {
        let values = match point {
            Ok((o, r, a, nq, np)) => [Some(o), Some(r), Some(a), Some(nq), Some(np)],
            Err(e) => {
                out.failures.push(SweepFailure { lambda: *lambda, message: e.to_string() });
                [None; 5]
            }
        };
        out.objectives.push(values[0]);
        out.rhos.push(values[1]);
        out.alphas.push(values[2]);
        out.norm_q_or_pi.push(values[3]);
        out.norm_p.push(values[4]);
    }
    Ok(out)
}

/// Covering-number bound on the probability that a fresh sample violates
/// the learned margin. Only meaningful relative to the supplied constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub m: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub covering_constant: f64,
    /// `(C/m)·(log(1/δ) + √ε·log m + ε⁻²·log(1/ε))` before clamping.
    pub raw_bound: f64,
    /// `raw_bound` clamped to `[0, 1]`.
    pub bound: f64,
    pub note: String,
}

pub fn generalization_bound(m: usize, delta: f64, epsilon: f64, covering_constant: f64) -> Result<GeneralizationReport> {
    if m < 1 {
        return Err(Error::InvalidInput("m must be ≥ 1".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidInput(format!("delta must lie in (0, 1] (got {delta})")));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be > 0 (got {epsilon})")));
    }
    if !(covering_constant.is_finite() && covering_constant > 0.0) {
        return Err(Error::InvalidInput(format!("covering constant must be > 0 (got {covering_constant})")));
    }
    let mf = m as f64;
    let raw = covering_constant / mf * ((1.0 / delta).ln() + epsilon.sqrt() * mf.ln() + (1.0 / epsilon).ln() / (epsilon * epsilon));
    Ok(GeneralizationReport {
        m,
        delta,
        epsilon,
        covering_constant,
        raw_bound: raw,
        bound: raw.clamp(0.0, 1.0),
        note: "conditional on supplied constant".into(),
    })
}

/// Supply-bound error `ε̄ = ε₀ + ε₁ + max(ρ̂ − ε_ρ, 0)` from user-supplied
/// approximation errors `ε₀`, `ε₁` and generalization error `ε_ρ`; none of
/// them can be computed from data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub epsilon_0: f64,
    pub epsilon_1: f64,
    pub epsilon_rho: f64,
    pub rho_hat: f64,
    pub total: f64,
}

pub fn error_budget(epsilon_0: f64, epsilon_1: f64, epsilon_rho: f64, rho_hat: f64) -> Result<ErrorBudget> {
    for (name, v) in [("epsilon_0", epsilon_0), ("epsilon_1", epsilon_1), ("epsilon_rho", epsilon_rho)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidInput(format!("{name} must be ≥ 0 (got {v})")));
        }
    }
    if !rho_hat.is_finite() {
        return Err(Error::InvalidInput(format!("rho_hat must be finite (got {rho_hat})")));
    }
    let total = epsilon_0 + epsilon_1 + (rho_hat - epsilon_rho).max(0.0);
    Ok(ErrorBudget { epsilon_0, epsilon_1, epsilon_rho, rho_hat, total })
}

pub fn write_verification(report: &VerificationReport, csv: &Path, json: &Path) -> Result<()> {
    write_string(csv, &report.to_csv())?;
    write_string(json, &report.to_json())
}

pub fn write_sweep(sweep: &SweepResult, csv: &Path, json: &Path) -> Result<()> {
    write_string(csv, &sweep.to_csv())?;
    write_string(json, &sweep.to_json())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_constant_values() {
        assert_eq!(summarize(&[0.5, 0.5, 0.5]), (0.5, 0.0, 0.0));
    }

    #[test]
    fn monotone_skips_missing() {
        let v = [Some(1.0), None, Some(0.5), Some(0.5 + 1e-9)];
        assert!(monotone(&v, -1.0, 1e-6));
        assert!(!monotone(&v, 1.0, 1e-6));
    }

    #[test]
    fn grid_must_increase() {
        assert!(validate_grid(&[0.1]).is_err());
        assert!(validate_grid(&[0.1, 0.1]).is_err());
        assert!(validate_grid(&[0.0, 0.1]).is_err());
        assert!(validate_grid(&[0.1, 1.0]).is_ok());
    }
}
