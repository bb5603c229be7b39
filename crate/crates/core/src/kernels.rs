//! Kernel evaluation, Gram assembly and kernel-interpolation fits.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition estimate above which a regularized Gram is treated as singular.
pub const MAX_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `aᵀb`
    Linear,
    /// `(aᵀb + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `exp(−‖a − b‖² / (2·bandwidth²))`
    Gaussian { bandwidth: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, offset } => {
                if degree < 1 || !(offset.is_finite() && offset >= 0.0) {
                    Err(Error::InvalidInput(format!(
                        "polynomial kernel needs degree ≥ 1 and offset ≥ 0 (got {degree}, {offset})"
                    )))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Gaussian { bandwidth } => {
                if bandwidth.is_finite() && bandwidth > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!("gaussian bandwidth must be > 0 (got {bandwidth})")))
                }
            }
        }
    }

    /// Kernel value without dimension checks.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Polynomial { degree, offset } => (dot(a, b) + offset).powi(degree as i32),
            KernelSpec::Gaussian { bandwidth } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }

    /// Gaussian kernel with the median pairwise distance of `points` as
    /// bandwidth. Falls back to 1 when all points coincide.
    pub fn gaussian_median(points: &[Vec<f64>]) -> KernelSpec {
        KernelSpec::Gaussian { bandwidth: median_pairwise_distance(points).unwrap_or(1.0) }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn eval_kernel(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "kernel arguments have dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    spec.validate()?;
    Ok(spec.eval(a, b))
}

/// Median of the strictly positive pairwise distances, `None` if there are
/// none. Large point sets are subsampled on a fixed stride.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> Option<f64> {
    const MAX_POINTS: usize = 1000;
    let stride = points.len().div_ceil(MAX_POINTS).max(1);
    let pts: Vec<&Vec<f64>> = points.iter().step_by(stride).collect();
    let mut d: Vec<f64> = Vec::with_capacity(pts.len() * pts.len() / 2);
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let dist = pts[i].iter().zip(pts[j].iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            if dist > 0.0 {
                d.push(dist);
            }
        }
    }
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    Some(if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] })
}

/// Kernel Gram matrix on a set of anchors, optionally with extra columns of
/// kernel values between the anchors and further evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub spec: KernelSpec,
    pub anchors: Vec<Vec<f64>>,
    /// `entries[(i, j)] = κ(anchor_i, anchor_j)`.
    pub entries: DMatrix<f64>,
    /// `eval_columns[(i, s)] = κ(anchor_i, eval_s)`.
    pub eval_columns: Option<DMatrix<f64>>,
}

impl GramMatrix {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// Kernel section `[κ(anchor_i, x)]_i`.
    pub fn section(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.anchors.len(), self.anchors.iter().map(|a| self.spec.eval(a, x)))
    }

    /// Default Tikhonov weight `1e-8 · trace(G) / T`.
    pub fn default_ridge(&self) -> f64 {
        1e-8 * self.trace() / self.len().max(1) as f64
    }
}

fn check_points(points: &[Vec<f64>], dim: usize, what: &str) -> Result<()> {
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::InvalidInput(format!(
            "{what} have mixed dimensions ({} vs {dim})",
            p.len()
        )));
    }
    Ok(())
}

fn kernel_block(spec: &KernelSpec, rows: &[Vec<f64>], cols: &[Vec<f64>], symmetric: bool) -> DMatrix<f64> {
    let compute_row = |i: usize| -> Vec<f64> {
        let start = if symmetric { i } else { 0 };
        (start..cols.len()).map(|j| spec.eval(&rows[i], &cols[j])).collect()
    };
    #[cfg(feature = "parallel")]
    let computed: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..rows.len()).into_par_iter().map(compute_row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let computed: Vec<Vec<f64>> = (0..rows.len()).map(compute_row).collect();

    let mut m = DMatrix::zeros(rows.len(), cols.len());
    for (i, row) in computed.into_iter().enumerate() {
        let start = if symmetric { i } else { 0 };
        for (k, v) in row.into_iter().enumerate() {
            let j = start + k;
            m[(i, j)] = v;
            if symmetric {
                m[(j, i)] = v;
            }
        }
    }
    m
}

/// Assembles the Gram matrix of `anchors` and, if given, the columns for
/// `eval_points`.
pub fn gram(spec: &KernelSpec, anchors: &[Vec<f64>], eval_points: Option<&[Vec<f64>]>) -> Result<GramMatrix> {
    spec.validate()?;
    let first = anchors.first().ok_or_else(|| Error::InvalidInput("no anchors".into()))?;
    let dim = first.len();
    check_points(anchors, dim, "anchors")?;
    let entries = kernel_block(spec, anchors, anchors, true);
    let eval_columns = match eval_points {
        Some(pts) => {
            check_points(pts, dim, "evaluation points")?;
            Some(kernel_block(spec, anchors, pts, false))
        }
        None => None,
    };
    Ok(GramMatrix { spec: *spec, anchors: anchors.to_vec(), entries, eval_columns })
}

/// Solves `(G + ridge·I) c = targets`.
///
/// The condition number is estimated from the Cholesky factor as
/// `(max Lᵢᵢ / min Lᵢᵢ)²`, a lower bound on the true condition number.
pub fn fit_norm_coefficients(g: &GramMatrix, targets: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let t = g.len();
    if targets.len() != t {
        return Err(Error::InvalidInput(format!(
            "{} targets for {t} anchors",
            targets.len()
        )));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::InvalidInput(format!("ridge must be ≥ 0 (got {ridge})")));
    }
    let k = &g.entries + DMatrix::identity(t, t) * ridge;
    let chol = Cholesky::new(k).ok_or(Error::SingularGram { condition: f64::INFINITY })?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let condition = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::SingularGram { condition });
    }
    let c = chol.solve(&DVector::from_column_slice(targets));
    Ok(c.iter().copied().collect())
}

/// Kernel-interpolation coefficients `ĉ`, `v̂ʸ`, `v̂ᵘ` for the norms of the
/// state, output and input anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub c_hat: Vec<f64>,
    pub v_hat_y: Vec<f64>,
    pub v_hat_u: Vec<f64>,
    pub ridge: f64,
}
