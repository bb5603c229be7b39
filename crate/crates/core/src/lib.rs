pub mod certificate;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod nonparametric;
pub mod parametric;
pub mod sampling;
pub mod solver;
pub mod verify;

pub use certificate::{Certificate, LearnConfig, Mode};
pub use error::{Error, LearnFailure, Result};
