//! Run configuration and the four pipeline commands behind the
//! `dissipakit` executable. Every command returns an exit code.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::certificate::{load_certificate, save_certificate, LearnConfig, Mode};
use crate::dynamics::{IntegratorConfig, ModelSpec};
use crate::error::Error;
use crate::sampling::{build_dataset, fmt_f64, load_dataset, read_string, save_dataset, DatasetSpec, ExcitationSpec, X0Policy};
use crate::solver::SolverConfig;
use crate::verify::{sweep_lambda, verify_dataset, write_sweep, write_verification, DEFAULT_VIOLATION_THRESHOLD};

pub const SEED_ENV: &str = "DISSIPAKIT_SEED";

/// Stable process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Validation = 2,
    Simulation = 3,
    Learning = 4,
    Verification = 5,
}

/// A failed command: what to print and how to exit.
#[derive(Debug)]
pub struct CommandError {
    pub code: ExitCode,
    pub message: String,
}

impl CommandError {
    fn new(code: ExitCode, message: impl Into<String>) -> Self {
        CommandError { code, message: message.into() }
    }

    fn validation(e: impl std::fmt::Display) -> Self {
        CommandError::new(ExitCode::Validation, e.to_string())
    }
}

pub type CommandResult = Result<String, CommandError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub m: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub x0: X0Policy,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let d = DatasetSpec::default();
        DatasetConfig { m: d.m, test_fraction: d.test_fraction, seed: d.seed, out_dir: PathBuf::from("data"), x0: d.x0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Largest violation rate that still passes.
    pub threshold: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { threshold: DEFAULT_VIOLATION_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { lambdas: vec![0.01, 0.1, 1.0, 10.0] }
    }
}

/// Everything a run needs; every field has a default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub integrator: IntegratorConfig,
    pub excitation: ExcitationSpec,
    pub dataset: DatasetConfig,
    pub learn: LearnConfig,
    pub solver: SolverConfig,
    pub verify: VerifyConfig,
    pub sweep: SweepConfig,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub mode: Option<Mode>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = read_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { file: path.to_path_buf(), line: e.line(), message: e.to_string() })
    }

    /// Applies `DISSIPAKIT_SEED` (given as `env_seed`) and then the flags.
    pub fn with_overrides(mut self, env_seed: Option<&str>, flags: &Overrides) -> Result<Self, Error> {
        if let Some(s) = env_seed {
            self.dataset.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("{SEED_ENV} must be an unsigned integer (got `{s}`)")))?;
        }
        if let Some(seed) = flags.seed {
            self.dataset.seed = seed;
        }
        if let Some(l) = flags.lambda {
            self.learn.lambda = l;
        }
        if let Some(m) = flags.mode {
            self.learn.mode = m;
        }
        Ok(self)
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            model: self.model.clone(),
            integrator: self.integrator,
            x0: self.dataset.x0,
            excitation: self.excitation,
            m: self.dataset.m,
            test_fraction: self.dataset.test_fraction,
            seed: self.dataset.seed,
        }
    }

    /// Checks every section before any work is done.
    pub fn validate(&self) -> Result<(), Error> {
        self.dataset_spec().validate()?;
        self.model.build(&self.integrator)?;
        self.learn.validate()?;
        self.solver.validate()?;
        if !(0.0..=1.0).contains(&self.verify.threshold) {
            return Err(Error::InvalidInput(format!("verify threshold must lie in [0, 1] (got {})", self.verify.threshold)));
        }
        Ok(())
    }
}

fn learn_code(e: &Error) -> ExitCode {
    match e {
        Error::LearnFailed(_) | Error::SingularGram { .. } => ExitCode::Learning,
        _ => ExitCode::Validation,
    }
}

/// Simulates the configured dataset into `out` (default `dataset.out_dir`).
pub fn cmd_simulate(cfg: &RunConfig, out: Option<&Path>) -> CommandResult {
    cfg.validate().map_err(CommandError::validation)?;
    let dir = out.unwrap_or(&cfg.dataset.out_dir);
    let dataset = build_dataset(&cfg.dataset_spec()).map_err(|e| match e {
        Error::SimulationDiverged { .. } | Error::Domain(_) => CommandError::new(ExitCode::Simulation, e.to_string()),
        other => CommandError::validation(other),
    })?;
    save_dataset(&dataset, dir).map_err(CommandError::validation)?;
    Ok(format!(
        "wrote {} trajectories ({} train, {} test) to {}",
        dataset.trajectories.len(),
        dataset.n_train(),
        dataset.trajectories.len() - dataset.n_train(),
        dir.display()
    ))
}

/// Learns a certificate from the training split in `data` and writes it to
/// `out`. On success the message is the one-line summary.
pub fn cmd_learn(cfg: &RunConfig, data: &Path, out: &Path) -> CommandResult {
    cfg.learn.validate().map_err(CommandError::validation)?;
    cfg.solver.validate().map_err(CommandError::validation)?;
    let dataset = load_dataset(data).map_err(CommandError::validation)?;
    let cert = cfg.learn.learn(&dataset, &cfg.solver).map_err(|e| {
        let code = learn_code(&e);
        let status = if code == ExitCode::Learning { "failed" } else { "invalid" };
        CommandError::new(
            code,
            format!("mode={} rho=nan alpha=nan obj=nan status={status}\n{e}", cfg.learn.mode),
        )
    })?;
    let obj = cert.objective().map_err(|e| CommandError::new(ExitCode::Learning, e.to_string()))?;
    save_certificate(&cert, out).map_err(CommandError::validation)?;
    Ok(format!(
        "mode={} rho={} alpha={} obj={} status=optimal",
        cert.mode(),
        fmt_f64(cert.rho()),
        fmt_f64(cert.alpha()),
        fmt_f64(obj)
    ))
}

/// Verifies `cert` on the test split in `data`, writing `verify.csv` and
/// `verify.json` into `out_dir`.
pub fn cmd_verify(cert: &Path, data: &Path, out_dir: &Path, threshold: f64) -> CommandResult {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CommandError::validation(format!("threshold must lie in [0, 1] (got {threshold})")));
    }
    let cert = load_certificate(cert).map_err(CommandError::validation)?;
    let dataset = load_dataset(data).map_err(CommandError::validation)?;
    let report = verify_dataset(&cert, &dataset).map_err(CommandError::validation)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CommandError::validation(Error::Io { path: out_dir.into(), source: e }))?;
    write_verification(&report, &out_dir.join("verify.csv"), &out_dir.join("verify.json")).map_err(CommandError::validation)?;
    let line = format!(
        "mode={} samples={} mean={} std={} violation_rate={} normalizer={} threshold={}",
        report.mode,
        report.per_sample_margins.len(),
        fmt_f64(report.mean),
        fmt_f64(report.std),
        fmt_f64(report.violation_rate),
        fmt_f64(report.normalizer),
        fmt_f64(threshold)
    );
    if report.passes(threshold) {
        Ok(line + " pass=true")
    } else {
        Err(CommandError::new(ExitCode::Verification, line + " pass=false"))
    }
}

/// Runs a λ sweep on the training split in `data`, writing `sweep.csv` and
/// `sweep.json` into `out_dir`. Succeeds if at least one λ learned.
pub fn cmd_sweep(cfg: &RunConfig, data: &Path, out_dir: &Path, grid: &[f64]) -> CommandResult {
    let dataset = load_dataset(data).map_err(CommandError::validation)?;
    let sweep = sweep_lambda(&dataset, &cfg.learn, grid, &cfg.solver).map_err(CommandError::validation)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CommandError::validation(Error::Io { path: out_dir.into(), source: e }))?;
    write_sweep(&sweep, &out_dir.join("sweep.csv"), &out_dir.join("sweep.json")).map_err(CommandError::validation)?;
    let mut msg = format!("mode={} lambdas={} succeeded={}", sweep.mode, sweep.lambdas.len(), sweep.n_succeeded());
    for f in &sweep.failures {
        msg.push_str(&format!("\nlambda={} failed: {}", fmt_f64(f.lambda), f.message));
    }
    if sweep.n_succeeded() == 0 {
        return Err(CommandError::new(ExitCode::Learning, msg));
    }
    Ok(msg)
}

/// Parses a comma-separated λ grid.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad lambda `{}`", t.trim()))))
        .collect()
}
