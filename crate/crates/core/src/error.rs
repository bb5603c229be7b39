use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid program: {0}")]
    InvalidProgram(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("Gram matrix is numerically singular (condition estimate {condition:.3e}); raise the ridge")]
    SingularGram { condition: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("simulation diverged at step {step}{}", trajectory.map(|k| format!(" of trajectory {k}")).unwrap_or_default())]
    SimulationDiverged { step: usize, trajectory: Option<usize> },

    #[error("learning failed: {0}")]
    LearnFailed(LearnFailure),

    #[error("no L2-gain certificate: {0}")]
    NoGainCertificate(String),

    #[error("{}:{line}: {message}", file.display())]
    Parse { file: PathBuf, line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Why a learner could not return a certificate.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnFailure {
    Infeasible { primal_residual: f64, iterations: usize },
    NotConverged { primal: f64, dual: f64, cone: f64, iterations: usize },
}

impl std::fmt::Display for LearnFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LearnFailure::Infeasible { primal_residual, iterations } => write!(
                f,
                "program infeasible (primal residual {primal_residual:.3e} after {iterations} iterations)"
            ),
            LearnFailure::NotConverged { primal, dual, cone, iterations } => write!(
                f,
                "solver did not converge in {iterations} iterations (primal {primal:.3e}, dual {dual:.3e}, cone {cone:.3e})"
            ),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
