//! Quadratic storage and supply certificates: `V(x) = xᵀPx`, `s(z) = zᵀQz`
//! with `z = [y; u]`, learned by a one-class SVM style program.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::LinearSystem;
use crate::error::{Error, Result};
use crate::linalg::{block_diag, max_eigenvalue, min_eigenvalue, outer, sym_from_triu, triu_pairs, SymMatrix};
use crate::sampling::{flatten_training, Dataset, Sample};
use crate::solver::{solve, ConeProgram, PsdBlock, SolverConfig};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_ETA: f64 = 1e-6;

/// `Γ = z zᵀ` and `Δ = x xᵀ − x⁺ x⁺ᵀ` of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DualParams {
    pub gamma: SymMatrix,
    pub delta: SymMatrix,
}

pub fn dual_params(sample: &Sample) -> DualParams {
    let gamma = outer(&sample.z, &sample.z);
    let delta = outer(&sample.x, &sample.x) - outer(&sample.x_next, &sample.x_next);
    DualParams { gamma: SymMatrix::from_matrix_unchecked(gamma), delta: SymMatrix::from_matrix_unchecked(delta) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParametricWire", into = "ParametricWire")]
pub struct ParametricCertificate {
    pub n_y: usize,
    pub n_u: usize,
    pub q: SymMatrix,
    pub p: SymMatrix,
    pub rho: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub eta: f64,
}

impl ParametricCertificate {
    pub fn n_x(&self) -> usize {
        self.p.dim()
    }

    pub fn storage(&self, x: &[f64]) -> f64 {
        self.p.quad_form(x)
    }

    pub fn supply(&self, z: &[f64]) -> f64 {
        self.q.quad_form(z)
    }

    /// `‖Q‖_F² + ‖P‖_F² − ρ + λα`.
    pub fn objective(&self) -> f64 {
        self.q.frobenius_norm().powi(2) + self.p.frobenius_norm().powi(2) - self.rho + self.lambda * self.alpha
    }

    /// `blkdiag(−I_{n_y}, α I_{n_u})`.
    pub fn supply_cap(&self) -> DMatrix<f64> {
        supply_cap(self.n_y, self.n_u, self.alpha)
    }

    pub fn gain_bound(&self) -> Result<GainBound> {
        gain_bound(&self.q, self.n_y, self.n_u, self.eta)
    }
}

pub fn supply_cap(n_y: usize, n_u: usize, alpha: f64) -> DMatrix<f64> {
    block_diag(&(-DMatrix::identity(n_y, n_y)), &(DMatrix::identity(n_u, n_u) * alpha))
}

#[derive(Serialize, Deserialize)]
struct ParametricWire {
    #[serde(rename = "type")]
    kind: String,
    n_y: usize,
    n_u: usize,
    n_x: usize,
    #[serde(rename = "Q")]
    q: SymMatrix,
    #[serde(rename = "P")]
    p: SymMatrix,
    rho: f64,
    alpha: f64,
    lambda: f64,
    epsilon: f64,
    eta: f64,
    kernel: Option<serde_json::Value>,
}

impl From<ParametricCertificate> for ParametricWire {
    fn from(c: ParametricCertificate) -> Self {
        ParametricWire {
            kind: "parametric".into(),
            n_y: c.n_y,
            n_u: c.n_u,
            n_x: c.p.dim(),
            q: c.q,
            p: c.p,
            rho: c.rho,
            alpha: c.alpha,
            lambda: c.lambda,
            epsilon: c.epsilon,
            eta: c.eta,
            kernel: None,
        }
    }
}

impl TryFrom<ParametricWire> for ParametricCertificate {
    type Error = String;

    fn try_from(w: ParametricWire) -> std::result::Result<Self, String> {
        if w.kind != "parametric" {
            return Err(format!("expected type \"parametric\", found {:?}", w.kind));
        }
        if w.kernel.as_ref().is_some_and(|k| !k.is_null()) {
            return Err("parametric certificates carry no kernel".into());
        }
        if w.q.dim() != w.n_y + w.n_u || w.p.dim() != w.n_x {
            return Err(format!(
                "matrix sizes Q {}x{0}, P {}x{1} do not match n_y={}, n_u={}, n_x={}",
                w.q.dim(),
                w.p.dim(),
                w.n_y,
                w.n_u,
                w.n_x
            ));
        }
        Ok(ParametricCertificate {
            n_y: w.n_y,
            n_u: w.n_u,
            q: w.q,
            p: w.p,
            rho: w.rho,
            alpha: w.alpha,
            lambda: w.lambda,
            epsilon: w.epsilon,
            eta: w.eta,
        })
    }
}

/// `⟨Q, Γ⟩ + ⟨P, Δ⟩ = s(z) + V(x) − V(x⁺)`.
pub fn margin(cert: &ParametricCertificate, sample: &Sample) -> f64 {
    cert.supply(&sample.z) + cert.storage(&sample.x) - cert.storage(&sample.x_next)
}

/// Variable layout of the parametric program: upper triangles of `Q` and
/// `P`, then `ρ`, then `α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParametricLayout {
    pub n_y: usize,
    pub n_u: usize,
    pub n_x: usize,
}

impl ParametricLayout {
    pub fn n_z(&self) -> usize {
        self.n_y + self.n_u
    }
    pub fn n_q(&self) -> usize {
        self.n_z() * (self.n_z() + 1) / 2
    }
    pub fn n_p(&self) -> usize {
        self.n_x * (self.n_x + 1) / 2
    }
    pub fn rho(&self) -> usize {
        self.n_q() + self.n_p()
    }
    pub fn alpha(&self) -> usize {
        self.rho() + 1
    }
    pub fn n_vars(&self) -> usize {
        self.alpha() + 1
    }
}

fn sample_dims(samples: &[Sample]) -> Result<ParametricLayout> {
    let first = samples.first().ok_or_else(|| Error::InvalidInput("no training samples".into()))?;
    let layout = ParametricLayout { n_y: first.y.len(), n_u: first.u.len(), n_x: first.x.len() };
    let consistent = samples.iter().all(|s| {
        s.y.len() == layout.n_y
            && s.u.len() == layout.n_u
            && s.x.len() == layout.n_x
            && s.x_next.len() == layout.n_x
            && s.z.len() == layout.n_z()
    });
    if !consistent || layout.n_x == 0 || layout.n_u == 0 || layout.n_y == 0 {
        return Err(Error::InvalidInput("samples have inconsistent or empty dimensions".into()));
    }
    Ok(layout)
}

fn validate_weights(lambda: f64, epsilon: f64, eta: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be > 0 (got {lambda})")));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be > 0 (got {epsilon})")));
    }
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::InvalidInput(format!("eta must be ≥ 0 (got {eta})")));
    }
    Ok(())
}

/// Coefficients of `⟨S, M⟩` in the upper-triangle variables of `S`.
fn triu_inner_coeffs(m: &DMatrix<f64>) -> Vec<f64> {
    triu_pairs(m.nrows()).into_iter().map(|(i, j)| if i == j { m[(i, i)] } else { 2.0 * m[(i, j)] }).collect()
}

/// Builds the cone program
/// `min ‖Q‖_F² + ‖P‖_F² − ρ + λα` subject to `P ⪰ εI`,
/// `Q ⪯ blkdiag(−I, αI) − ηI`, `α ≥ η`, `ρ ≥ 0` and
/// `⟨Q, Γ_t⟩ + ⟨P, Δ_t⟩ ≥ ρ` for every sample.
pub fn assemble_parametric(
    samples: &[Sample],
    lambda: f64,
    epsilon: f64,
    eta: f64,
) -> Result<(ConeProgram, ParametricLayout)> {
    validate_weights(lambda, epsilon, eta)?;
    let lay = sample_dims(samples)?;
    let n = lay.n_vars();

    let mut h = DMatrix::zeros(n, n);
    for (k, (i, j)) in triu_pairs(lay.n_z()).into_iter().enumerate() {
        h[(k, k)] = if i == j { 2.0 } else { 4.0 };
    }
    for (k, (i, j)) in triu_pairs(lay.n_x).into_iter().enumerate() {
        h[(lay.n_q() + k, lay.n_q() + k)] = if i == j { 2.0 } else { 4.0 };
    }
    let mut g = DVector::zeros(n);
    g[lay.rho()] = -1.0;
    g[lay.alpha()] = lambda;

    let mut a = DMatrix::zeros(samples.len() + 2, n);
    let mut b = DVector::zeros(samples.len() + 2);
    for (r, s) in samples.iter().enumerate() {
        let dp = dual_params(s);
        for (k, c) in triu_inner_coeffs(dp.gamma.as_matrix()).into_iter().enumerate() {
            a[(r, k)] = c;
        }
        for (k, c) in triu_inner_coeffs(dp.delta.as_matrix()).into_iter().enumerate() {
            a[(r, lay.n_q() + k)] = c;
        }
        a[(r, lay.rho())] = -1.0;
    }
    let m = samples.len();
    a[(m, lay.rho())] = 1.0;
    a[(m + 1, lay.alpha())] = 1.0;
    b[m + 1] = eta;

    let mut storage = PsdBlock::with_offset(DMatrix::identity(lay.n_x, lay.n_x) * -epsilon);
    for (k, (i, j)) in triu_pairs(lay.n_x).into_iter().enumerate() {
        storage.push(i, j, lay.n_q() + k, 1.0);
    }
    let cap_offset = supply_cap(lay.n_y, lay.n_u, 0.0) - DMatrix::identity(lay.n_z(), lay.n_z()) * eta;
    let mut supply = PsdBlock::with_offset(cap_offset);
    for (k, (i, j)) in triu_pairs(lay.n_z()).into_iter().enumerate() {
        supply.push(i, j, k, -1.0);
    }
    for d in lay.n_y..lay.n_z() {
        supply.push(d, d, lay.alpha(), 1.0);
    }

    let program = ConeProgram::new(h, g).with_inequalities(a, b).with_block(storage).with_block(supply);
    Ok((program, lay))
}

pub fn learn_parametric_samples(
    samples: &[Sample],
    lambda: f64,
    epsilon: f64,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<ParametricCertificate> {
    let (program, lay) = assemble_parametric(samples, lambda, epsilon, eta)?;
    let sol = solve(&program, cfg)?.require_optimal()?;
    let v = &sol.variables;
    Ok(ParametricCertificate {
        n_y: lay.n_y,
        n_u: lay.n_u,
        q: SymMatrix::from_matrix_unchecked(sym_from_triu(lay.n_z(), &v[..lay.n_q()])),
        p: SymMatrix::from_matrix_unchecked(sym_from_triu(lay.n_x, &v[lay.n_q()..lay.rho()])),
        rho: v[lay.rho()],
        alpha: v[lay.alpha()],
        lambda,
        epsilon,
        eta,
    })
}

/// Learns `(Q, P, ρ, α)` from the training split of `dataset`.
pub fn learn_parametric(
    dataset: &Dataset,
    lambda: f64,
    epsilon: f64,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<ParametricCertificate> {
    learn_parametric_samples(&flatten_training(dataset), lambda, epsilon, eta, cfg)
}

/// Certified `L2`-gain `≤ √β*` at multiplier `α*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainBound {
    pub alpha_star: f64,
    pub beta_star: f64,
}

impl GainBound {
    pub fn gain(&self) -> f64 {
        self.beta_star.sqrt()
    }
}

struct SupplyBlocks {
    yy: DMatrix<f64>,
    yu: DMatrix<f64>,
    uu: DMatrix<f64>,
}

fn split_supply(q: &SymMatrix, n_y: usize, n_u: usize) -> Result<SupplyBlocks> {
    if q.dim() != n_y + n_u || n_y == 0 || n_u == 0 {
        return Err(Error::InvalidInput(format!("Q is {}x{0} but n_y + n_u = {}", q.dim(), n_y + n_u)));
    }
    let m = q.as_matrix();
    Ok(SupplyBlocks {
        yy: m.view((0, 0), (n_y, n_y)).into_owned(),
        yu: m.view((0, n_y), (n_y, n_u)).into_owned(),
        uu: m.view((n_y, n_y), (n_u, n_u)).into_owned(),
    })
}

/// Smallest admissible `β` at multiplier `α`, i.e. `λ_max(αΠ_uu + α²Π_yuᵀN⁻¹Π_yu)`
/// with `N = −(I + αΠ_yy)`, or `None` when `λ_min(N) < η`.
pub fn beta_at(q: &SymMatrix, n_y: usize, n_u: usize, alpha: f64, eta: f64) -> Result<Option<f64>> {
    let blocks = split_supply(q, n_y, n_u)?;
    Ok(beta_from_blocks(&blocks, alpha, eta))
}

fn beta_from_blocks(b: &SupplyBlocks, alpha: f64, eta: f64) -> Option<f64> {
    if !(alpha > 0.0) {
        return None;
    }
    let n = -(DMatrix::identity(b.yy.nrows(), b.yy.nrows()) + &b.yy * alpha);
    if min_eigenvalue(&n) < eta {
        return None;
    }
    let chol = n.cholesky()?;
    let s = &b.uu * alpha + b.yu.transpose() * chol.solve(&b.yu) * (alpha * alpha);
    Some(max_eigenvalue(&crate::linalg::symmetrize(&s)).max(f64::MIN_POSITIVE))
}

/// Largest eigenvalues of `I + αΠ_yy` and of the full gain block matrix
/// `[[I + αΠ_yy, αΠ_yu], [αΠ_yuᵀ, αΠ_uu − βI]]`.
pub fn gain_conditions(q: &SymMatrix, n_y: usize, n_u: usize, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    let b = split_supply(q, n_y, n_u)?;
    let top = DMatrix::identity(n_y, n_y) + &b.yy * alpha;
    let mut m = DMatrix::zeros(n_y + n_u, n_y + n_u);
    m.view_mut((0, 0), (n_y, n_y)).copy_from(&top);
    m.view_mut((0, n_y), (n_y, n_u)).copy_from(&(&b.yu * alpha));
    m.view_mut((n_y, 0), (n_u, n_y)).copy_from(&(b.yu.transpose() * alpha));
    m.view_mut((n_y, n_y), (n_u, n_u)).copy_from(&(&b.uu * alpha - DMatrix::identity(n_u, n_u) * beta));
    Ok((max_eigenvalue(&top), max_eigenvalue(&m)))
}

/// Minimizes `β(α)` over a 60-point logarithmic grid on `[10⁻³, 10³]`
/// followed by golden-section refinement around the best grid point.
pub fn gain_bound(q: &SymMatrix, n_y: usize, n_u: usize, eta: f64) -> Result<GainBound> {
    let blocks = split_supply(q, n_y, n_u)?;
    let lmax = max_eigenvalue(&blocks.yy);
    if lmax >= 0.0 {
        return Err(Error::NoGainCertificate(format!(
            "Π_yy has eigenvalue {lmax:.3e} ≥ 0, so I + αΠ_yy ≺ 0 fails for every α > 0"
        )));
    }
    let alpha_min = (1.0 + eta) / -lmax;
    let beta = |a: f64| beta_from_blocks(&blocks, a, eta);

    let mut grid: Vec<f64> =
        (0..60).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 59.0)).filter(|a| *a > alpha_min).collect();
    grid.insert(0, alpha_min);
    if grid.len() == 1 {
        grid.extend([2.0, 4.0, 8.0].map(|f| alpha_min * f));
    }
    let vals: Vec<Option<f64>> = grid.iter().map(|a| beta(*a)).collect();
    let (best, _) = vals
        .iter()
        .enumerate()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::NoGainCertificate("β(α) undefined on the whole α grid".into()))?;

    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(grid.len() - 1)];
    let f = |a: f64| beta(a).unwrap_or(f64::INFINITY);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut candidates = vec![(grid[best], vals[best].unwrap()), (x1, f1), (x2, f2)];
    if let Some(v) = beta(lo) {
        candidates.push((lo, v));
    }
    let (alpha_star, beta_star) =
        candidates.into_iter().filter(|(_, v)| v.is_finite()).min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    Ok(GainBound { alpha_star, beta_star })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmiCheck {
    pub feasible: bool,
    pub min_eig: f64,
}

/// Model-based matrix over `w = [u; x]`:
/// `EᵀQE − [[BᵀPB, BᵀPA], [AᵀPB, AᵀPA − P]]`, where `E w = [Cx; u]` maps
/// `w` to the combined variable, so that `wᵀMw = s(z) + V(x) − V(x⁺)`.
pub fn lmi_matrix(lin: &LinearSystem, q: &SymMatrix, p: &SymMatrix) -> Result<DMatrix<f64>> {
    let (nx, nu, ny) = (lin.a.nrows(), lin.b.ncols(), lin.c.nrows());
    if q.dim() != ny + nu || p.dim() != nx {
        return Err(Error::InvalidInput(format!(
            "Q is {}x{0}, P is {}x{1}; expected {}x{2} and {nx}x{nx}",
            q.dim(),
            p.dim(),
            ny + nu
        )));
    }
    let mut e = DMatrix::zeros(ny + nu, nu + nx);
    e.view_mut((0, nu), (ny, nx)).copy_from(&lin.c);
    e.view_mut((ny, 0), (nu, nu)).copy_from(&DMatrix::identity(nu, nu));
    let p = p.as_matrix();
    let mut model = DMatrix::zeros(nu + nx, nu + nx);
    model.view_mut((0, 0), (nu, nu)).copy_from(&(lin.b.transpose() * p * &lin.b));
    model.view_mut((0, nu), (nu, nx)).copy_from(&(lin.b.transpose() * p * &lin.a));
    model.view_mut((nu, 0), (nx, nu)).copy_from(&(lin.a.transpose() * p * &lin.b));
    model.view_mut((nu, nu), (nx, nx)).copy_from(&(lin.a.transpose() * p * &lin.a - p));
    Ok(crate::linalg::symmetrize(&(e.transpose() * q.as_matrix() * e - model)))
}

pub fn lmi_certificate(lin: &LinearSystem, q: &SymMatrix, p: &SymMatrix, rho_min: f64) -> Result<LmiCheck> {
    let min_eig = min_eigenvalue(&lmi_matrix(lin, q, p)?);
    Ok(LmiCheck { feasible: min_eig >= rho_min, min_eig })
}
