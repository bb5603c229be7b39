//! Kernel storage and supply certificates:
//! `V(x) = Σ p_ij κ_x(x_i, x) κ_x(x_j, x)` and
//! `s(z) = Σ π_ij κ_z(z_i, z) κ_z(z_j, z)`, learned from Gram matrices on the
//! training samples.
//!
//! Every constraint of the learning program touches `π` only through
//! `φ_tᵀ π φ_t` with `φ_t = Φ e_t`, and `p` only through quadratic forms at
//! columns of `Ψ` once every successor state is itself an anchor. The
//! stationarity condition then reads `ΦπΦ = Φ diag(μ) Φ`, so a diagonal `π`
//! (and likewise `p`) attains the optimum. [`Formulation::Reduced`] solves
//! for those diagonals directly; [`Formulation::Full`] keeps every symmetric
//! entry and is meant for small cross-checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{fit_norm_coefficients, gram, CoefficientSet, GramMatrix, KernelSpec};
use crate::linalg::{matrix_to_rows, rows_to_matrix, sym_from_triu, triu_pairs, SymMatrix};
use crate::parametric::DEFAULT_ETA;
use crate::sampling::{flatten_training, Dataset, Sample};
use crate::solver::{psd_project, solve, ConeProgram, SolverConfig};

pub const DEFAULT_STORAGE_WEIGHT: f64 = 1.0;
pub const DEFAULT_SPECTRAL_CUTOFF: f64 = 1e-10;

/// Kernels on the combined variable, state, output and input spaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSet {
    pub z: KernelSpec,
    pub x: KernelSpec,
    pub y: KernelSpec,
    pub u: KernelSpec,
}

impl KernelSet {
    pub fn uniform(spec: KernelSpec) -> Self {
        KernelSet { z: spec, x: spec, y: spec, u: spec }
    }

    /// Gaussian kernels with median-distance bandwidths on each anchor set.
    pub fn gaussian_median(samples: &[Sample]) -> Self {
        let pick = |f: fn(&Sample) -> &Vec<f64>| -> Vec<Vec<f64>> { samples.iter().map(|s| f(s).clone()).collect() };
        KernelSet {
            z: KernelSpec::gaussian_median(&pick(|s| &s.z)),
            x: KernelSpec::gaussian_median(&pick(|s| &s.x)),
            y: KernelSpec::gaussian_median(&pick(|s| &s.y)),
            u: KernelSpec::gaussian_median(&pick(|s| &s.u)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        [self.z, self.x, self.y, self.u].iter().try_for_each(|k| k.validate())
    }
}

/// Which states serve as storage anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateAnchors {
    /// The training states `x_t` only; successors appear as evaluation columns.
    Samples,
    /// The training states plus each trajectory's final state, so that every
    /// successor `x_{t+1}` is an anchor.
    #[default]
    WithTerminals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Diagonal `π` and `p`; needs [`StateAnchors::WithTerminals`].
    #[default]
    Reduced,
    /// All symmetric entries of `π` and `p`.
    Full,
}

/// Gram matrices of one training set.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSet {
    /// Gram on `z_1..z_T`.
    pub phi: GramMatrix,
    /// Gram on the state anchors, with evaluation columns at `x_{t+1}`.
    pub psi: GramMatrix,
    pub phi_y: GramMatrix,
    pub phi_u: GramMatrix,
    /// State anchor index of each successor `x_{t+1}`, when it is an anchor.
    pub next_anchor: Vec<Option<usize>>,
}

impl GramSet {
    /// Number of training samples `T`.
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// Number of state anchors.
    pub fn n_state_anchors(&self) -> usize {
        self.psi.len()
    }

    pub fn kernels(&self) -> KernelSet {
        KernelSet { z: self.phi.spec, x: self.psi.spec, y: self.phi_y.spec, u: self.phi_u.spec }
    }

    /// `[κ_x(x_s, x_{t+1})]_s`.
    pub fn psi_next(&self, t: usize) -> DVector<f64> {
        match self.next_anchor[t] {
            Some(k) => self.psi.entries.column(k).into_owned(),
            None => self.psi.eval_columns.as_ref().expect("successor columns").column(t).into_owned(),
        }
    }
}

fn check_samples(samples: &[Sample]) -> Result<()> {
    let first = samples.first().ok_or_else(|| Error::InvalidInput("no training samples".into()))?;
    let ok = samples.iter().all(|s| {
        s.z.len() == first.z.len()
            && s.x.len() == first.x.len()
            && s.x_next.len() == first.x.len()
            && s.y.len() == first.y.len()
            && s.u.len() == first.u.len()
    });
    if !ok || first.x.is_empty() || first.y.is_empty() || first.u.is_empty() {
        return Err(Error::InvalidInput("samples have inconsistent or empty dimensions".into()));
    }
    Ok(())
}

/// Grams with anchors `x_1..x_T` and evaluation columns at every `x_{t+1}`.
pub fn assemble_grams(samples: &[Sample], kernels: &KernelSet) -> Result<GramSet> {
    assemble_grams_with(samples, kernels, StateAnchors::Samples)
}

pub fn assemble_grams_with(samples: &[Sample], kernels: &KernelSet, anchors: StateAnchors) -> Result<GramSet> {
    check_samples(samples)?;
    kernels.validate()?;
    let pick = |f: fn(&Sample) -> &Vec<f64>| -> Vec<Vec<f64>> { samples.iter().map(|s| f(s).clone()).collect() };
    let mut xs = pick(|s| &s.x);
    let mut next_anchor = Vec::with_capacity(samples.len());
    for (t, s) in samples.iter().enumerate() {
        let continues = samples.get(t + 1).is_some_and(|n| n.traj == s.traj && n.t == s.t + 1 && n.x == s.x_next);
        next_anchor.push(match (continues, anchors) {
            (true, _) => Some(t + 1),
            (false, StateAnchors::Samples) => None,
            (false, StateAnchors::WithTerminals) => {
                xs.push(s.x_next.clone());
                Some(xs.len() - 1)
            }
        });
    }
    let x_next = pick(|s| &s.x_next);
    Ok(GramSet {
        phi: gram(&kernels.z, &pick(|s| &s.z), None)?,
        psi: gram(&kernels.x, &xs, Some(&x_next))?,
        phi_y: gram(&kernels.y, &pick(|s| &s.y), None)?,
        phi_u: gram(&kernels.u, &pick(|s| &s.u), None)?,
        next_anchor,
    })
}

fn norms(points: &[Vec<f64>]) -> Vec<f64> {
    points.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

/// Default ridge: `1e-8 · trace(G)/n`, maximized over the three fitted Grams.
pub fn default_ridge(grams: &GramSet) -> f64 {
    [&grams.psi, &grams.phi_y, &grams.phi_u].iter().map(|g| g.default_ridge()).fold(0.0, f64::max)
}

/// Fits `ĉ`, `v̂ʸ`, `v̂ᵘ` so that the kernel expansions reproduce `‖x‖`,
/// `‖y‖`, `‖u‖` at the anchors.
pub fn fit_coefficient_set(grams: &GramSet, ridge: Option<f64>) -> Result<CoefficientSet> {
    let ridge = ridge.unwrap_or_else(|| default_ridge(grams));
    let fit = |g: &GramMatrix| fit_norm_coefficients(g, &norms(&g.anchors), ridge);
    Ok(CoefficientSet { c_hat: fit(&grams.psi)?, v_hat_y: fit(&grams.phi_y)?, v_hat_u: fit(&grams.phi_u)?, ridge })
}

/// Scalar settings of the learning program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgramOptions {
    pub lambda: f64,
    pub eta: f64,
    /// Multiplier `ε` on `ĉᵢĉⱼ` in the storage rows.
    pub storage_weight: f64,
    /// Relative eigenvalue floor of the reduced formulation's whitening.
    pub spectral_cutoff: f64,
}

impl ProgramOptions {
    pub fn new(lambda: f64) -> Self {
        ProgramOptions {
            lambda,
            eta: DEFAULT_ETA,
            storage_weight: DEFAULT_STORAGE_WEIGHT,
            spectral_cutoff: DEFAULT_SPECTRAL_CUTOFF,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidInput(format!("lambda must be > 0 (got {})", self.lambda)));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::InvalidInput(format!("eta must be ≥ 0 (got {})", self.eta)));
        }
        if !(self.storage_weight.is_finite() && self.storage_weight >= 0.0) {
            return Err(Error::InvalidInput(format!("storage weight must be ≥ 0 (got {})", self.storage_weight)));
        }
        if !(self.spectral_cutoff.is_finite() && (0.0..1.0).contains(&self.spectral_cutoff)) {
            return Err(Error::InvalidInput(format!(
                "spectral cutoff must lie in [0, 1) (got {})",
                self.spectral_cutoff
            )));
        }
        Ok(())
    }
}

/// Variable layout: `π` block, `p` block, then `ρ`, then `α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RkhsLayout {
    pub n_pi: usize,
    pub n_p: usize,
}

impl RkhsLayout {
    pub fn rho(&self) -> usize {
        self.n_pi + self.n_p
    }
    pub fn alpha(&self) -> usize {
        self.rho() + 1
    }
    pub fn n_vars(&self) -> usize {
        self.alpha() + 1
    }
}

/// Map from one block of program variables to a coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
enum BlockMap {
    /// Upper triangle of a symmetric `n × n` matrix.
    Triangle(usize),
    /// Diagonal `M c` for whitened coordinates `c`.
    Diagonal(DMatrix<f64>),
}

impl BlockMap {
    fn unpack(&self, vars: &[f64]) -> DMatrix<f64> {
        match self {
            BlockMap::Triangle(n) => sym_from_triu(*n, vars),
            BlockMap::Diagonal(m) => DMatrix::from_diagonal(&(m * DVector::from_column_slice(vars))),
        }
    }
}

/// Assembled learning program with the maps back to `(π, p, ρ, α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsProgram {
    pub program: ConeProgram,
    pub layout: RkhsLayout,
    pi_map: BlockMap,
    p_map: BlockMap,
}

/// Coefficients recovered from a solution vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsSolution {
    pub pi: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub rho: f64,
    pub alpha: f64,
}

impl RkhsProgram {
    pub fn unpack(&self, v: &[f64]) -> RkhsSolution {
        let lay = &self.layout;
        RkhsSolution {
            pi: self.pi_map.unpack(&v[..lay.n_pi]),
            p: self.p_map.unpack(&v[lay.n_pi..lay.rho()]),
            rho: v[lay.rho()],
            alpha: v[lay.alpha()],
        }
    }
}

/// Hessian of `½ tr(M G M G)` in the upper-triangle entries of a symmetric
/// `M`: `H_kl = tr(B_k G B_l G)` with `B_k` the basis matrix of entry `k`.
fn triangle_hessian(g: &DMatrix<f64>) -> DMatrix<f64> {
    let pairs = triu_pairs(g.nrows());
    // tr(E_pq G E_rs G) = G_qr G_sp.
    let terms = |(i, j): (usize, usize)| -> Vec<(usize, usize)> {
        if i == j {
            vec![(i, i)]
        } else {
            vec![(i, j), (j, i)]
        }
    };
    let mut h = DMatrix::zeros(pairs.len(), pairs.len());
    for (k, &a) in pairs.iter().enumerate() {
        for (l, &b) in pairs.iter().enumerate().skip(k) {
            let mut s = 0.0;
            for (p, q) in terms(a) {
                for (r, t) in terms(b) {
                    s += g[(q, r)] * g[(t, p)];
                }
            }
            h[(k, l)] = s;
            h[(l, k)] = s;
        }
    }
    h
}

/// Coefficients of `vᵀ M v` in the upper-triangle entries of `M`.
fn triangle_row(v: &[f64]) -> Vec<f64> {
    triu_pairs(v.len()).into_iter().map(|(i, j)| if i == j { v[i] * v[i] } else { 2.0 * v[i] * v[j] }).collect()
}

/// Factors `K = G ∘ G ≈ F Fᵀ` on the eigenvalues above `cutoff · λ_max`.
/// Returns `F = U Λ^{1/2}` and the map `U Λ^{-1/2}` from whitened
/// coordinates back to diagonal coefficients.
fn whiten(g: &DMatrix<f64>, cutoff: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = g.component_mul(g);
    let eig = SymmetricEigen::new(k);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > cutoff * top).collect();
    let n = g.nrows();
    let mut f = DMatrix::zeros(n, keep.len());
    let mut back = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let root = eig.eigenvalues[i].sqrt();
        let u = eig.eigenvectors.column(i);
        f.set_column(c, &(u * root));
        back.set_column(c, &(u / root));
    }
    (f, back)
}

/// Builds
/// `min ½(tr(πΦπΦ) + tr(pΨpΨ)) − ρ + λα` subject to, for every sample,
/// `ψ_tᵀ p ψ_t ≥ ε (ĉᵀψ_t)²`,
/// `α (v̂ᵘ·φᵘ_t)² − (v̂ʸ·φʸ_t)² ≥ φ_tᵀ π φ_t`,
/// `φ_tᵀ π φ_t + ψ_tᵀ p ψ_t − ψ'_tᵀ p ψ'_t ≥ ρ`,
/// and `ρ ≥ 0`, `α ≥ η`.
///
/// In the reduced formulation `π = diag(a)` and `p = diag(d)`, so the rows
/// read `(Φ∘Φ) a` and `(Ψ∘Ψ) d` and the objective is
/// `½(aᵀ(Φ∘Φ)a + dᵀ(Ψ∘Ψ)d)`. The program is posed in whitened coordinates
/// `a = UΛ^{-1/2}c` of `Φ∘Φ = UΛUᵀ` (likewise for `d`), which turns the
/// Hessian into the identity. Eigen-directions below the cutoff carry no
/// weight in any row and are dropped.
pub fn assemble_program(
    grams: &GramSet,
    coeffs: &CoefficientSet,
    opts: &ProgramOptions,
    formulation: Formulation,
) -> Result<RkhsProgram> {
    opts.validate()?;
    let t_len = grams.len();
    let nx = grams.n_state_anchors();
    let bad = |m: String| Err(Error::InvalidProgram(m));
    if grams.phi_y.len() != t_len || grams.phi_u.len() != t_len || grams.next_anchor.len() != t_len || nx < t_len {
        return bad("gram set dimensions disagree".into());
    }
    if coeffs.c_hat.len() != nx || coeffs.v_hat_y.len() != t_len || coeffs.v_hat_u.len() != t_len {
        return bad(format!(
            "coefficient lengths {}, {}, {} do not match {nx} state and {t_len} sample anchors",
            coeffs.c_hat.len(),
            coeffs.v_hat_y.len(),
            coeffs.v_hat_u.len()
        ));
    }
    if grams.next_anchor.iter().any(|a| a.is_none()) {
        if formulation == Formulation::Reduced {
            return Err(Error::InvalidInput(
                "the reduced formulation needs every successor state among the anchors".into(),
            ));
        }
        if grams.psi.eval_columns.as_ref().is_none_or(|e| e.shape() != (nx, t_len)) {
            return bad("state gram lacks successor evaluation columns".into());
        }
    }

    // Per-sample row coefficients for φ_tᵀπφ_t, ψ_tᵀpψ_t and ψ'_tᵀpψ'_t,
    // plus the objective blocks.
    let col = |m: &DMatrix<f64>, j: usize| -> Vec<f64> { m.column(j).iter().copied().collect() };
    let row = |m: &DMatrix<f64>, i: usize| -> Vec<f64> { m.row(i).iter().copied().collect() };
    let (pi_rows, p_now, p_next, h_pi, h_p, pi_map, p_map);
    match formulation {
        Formulation::Full => {
            pi_rows = (0..t_len).map(|t| triangle_row(&col(&grams.phi.entries, t))).collect::<Vec<_>>();
            p_now = (0..t_len).map(|t| triangle_row(&col(&grams.psi.entries, t))).collect::<Vec<_>>();
            p_next = (0..t_len)
                .map(|t| triangle_row(grams.psi_next(t).as_slice()))
                .collect::<Vec<_>>();
            h_pi = triangle_hessian(&grams.phi.entries);
            h_p = triangle_hessian(&grams.psi.entries);
            pi_map = BlockMap::Triangle(t_len);
            p_map = BlockMap::Triangle(nx);
        }
        Formulation::Reduced => {
            let (f_pi, back_pi) = whiten(&grams.phi.entries, opts.spectral_cutoff);
            let (f_p, back_p) = whiten(&grams.psi.entries, opts.spectral_cutoff);
            pi_rows = (0..t_len).map(|t| row(&f_pi, t)).collect();
            p_now = (0..t_len).map(|t| row(&f_p, t)).collect();
            p_next = (0..t_len).map(|t| row(&f_p, grams.next_anchor[t].expect("checked above"))).collect();
            h_pi = DMatrix::identity(f_pi.ncols(), f_pi.ncols());
            h_p = DMatrix::identity(f_p.ncols(), f_p.ncols());
            pi_map = BlockMap::Diagonal(back_pi);
            p_map = BlockMap::Diagonal(back_p);
        }
    }

    let lay = RkhsLayout { n_pi: h_pi.nrows(), n_p: h_p.nrows() };
    let n = lay.n_vars();
    let mut h = DMatrix::zeros(n, n);
    h.view_mut((0, 0), (lay.n_pi, lay.n_pi)).copy_from(&h_pi);
    h.view_mut((lay.n_pi, lay.n_pi), (lay.n_p, lay.n_p)).copy_from(&h_p);
    let mut g = DVector::zeros(n);
    g[lay.rho()] = -1.0;
    g[lay.alpha()] = opts.lambda;

    let c_hat = DVector::from_column_slice(&coeffs.c_hat);
    let v_y = DVector::from_column_slice(&coeffs.v_hat_y);
    let v_u = DVector::from_column_slice(&coeffs.v_hat_u);
    let rows = 3 * t_len + 2;
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    for t in 0..t_len {
        let (rs, rg, rd) = (t, t_len + t, 2 * t_len + t);
        for (k, c) in p_now[t].iter().enumerate() {
            a[(rs, lay.n_pi + k)] = *c;
            a[(rd, lay.n_pi + k)] = c - p_next[t][k];
        }
        b[rs] = opts.storage_weight * c_hat.dot(&grams.psi.entries.column(t)).powi(2);

        for (k, c) in pi_rows[t].iter().enumerate() {
            a[(rg, k)] = -c;
            a[(rd, k)] = *c;
        }
        a[(rg, lay.alpha())] = v_u.dot(&grams.phi_u.entries.column(t)).powi(2);
        b[rg] = v_y.dot(&grams.phi_y.entries.column(t)).powi(2);

        a[(rd, lay.rho())] = -1.0;
    }
    a[(3 * t_len, lay.rho())] = 1.0;
    a[(3 * t_len + 1, lay.alpha())] = 1.0;
    b[3 * t_len + 1] = opts.eta;

    Ok(RkhsProgram { program: ConeProgram::new(h, g).with_inequalities(a, b), layout: lay, pi_map, p_map })
}

/// Options of [`learn_rkhs`]. Kernels default to median-bandwidth Gaussians
/// and the ridge to [`default_ridge`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RkhsOptions {
    pub kernels: Option<KernelSet>,
    pub lambda: f64,
    pub eta: f64,
    pub ridge: Option<f64>,
    pub storage_weight: f64,
    pub spectral_cutoff: f64,
    pub formulation: Formulation,
    pub anchors: StateAnchors,
}

impl Default for RkhsOptions {
    fn default() -> Self {
        RkhsOptions {
            kernels: None,
            lambda: 1.0,
            eta: DEFAULT_ETA,
            ridge: None,
            storage_weight: DEFAULT_STORAGE_WEIGHT,
            spectral_cutoff: DEFAULT_SPECTRAL_CUTOFF,
            formulation: Formulation::Reduced,
            anchors: StateAnchors::WithTerminals,
        }
    }
}

impl RkhsOptions {
    pub fn program_options(&self) -> ProgramOptions {
        ProgramOptions {
            lambda: self.lambda,
            eta: self.eta,
            storage_weight: self.storage_weight,
            spectral_cutoff: self.spectral_cutoff,
        }
    }
}

/// Anchor points of a certificate, one list per kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub z: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RkhsWire", into = "RkhsWire")]
pub struct RkhsCertificate {
    pub kernels: KernelSet,
    pub anchors: AnchorSet,
    pub pi: SymMatrix,
    pub p: SymMatrix,
    pub coeffs: CoefficientSet,
    pub rho: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub eta: f64,
    pub storage_weight: f64,
}

/// Frobenius distance and smallest eigenvalue of `p − ε ĉĉᵀ`, with its
/// projection onto the PSD cone.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageFloorReport {
    pub min_eigenvalue: f64,
    pub projection_distance: f64,
    pub projected: SymMatrix,
}

impl RkhsCertificate {
    /// Number of training samples.
    pub fn n_samples(&self) -> usize {
        self.anchors.z.len()
    }

    fn section(spec: &KernelSpec, anchors: &[Vec<f64>], x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(anchors.len(), anchors.iter().map(|a| spec.eval(a, x)))
    }

    /// `V(x) = ψ(x)ᵀ p ψ(x)`.
    pub fn storage_value(&self, x: &[f64]) -> f64 {
        let k = Self::section(&self.kernels.x, &self.anchors.x, x);
        k.dot(&(self.p.as_matrix() * &k))
    }

    /// `s(z) = φ(z)ᵀ π φ(z)`.
    pub fn supply_value(&self, z: &[f64]) -> f64 {
        let k = Self::section(&self.kernels.z, &self.anchors.z, z);
        k.dot(&(self.pi.as_matrix() * &k))
    }

    /// Kernel estimates of `‖x‖`, `‖y‖` and `‖u‖`.
    pub fn norm_estimates(&self, x: &[f64], y: &[f64], u: &[f64]) -> (f64, f64, f64) {
        let e = |spec: &KernelSpec, anchors: &[Vec<f64>], c: &[f64], p: &[f64]| {
            Self::section(spec, anchors, p).dot(&DVector::from_column_slice(c))
        };
        (
            e(&self.kernels.x, &self.anchors.x, &self.coeffs.c_hat, x),
            e(&self.kernels.y, &self.anchors.y, &self.coeffs.v_hat_y, y),
            e(&self.kernels.u, &self.anchors.u, &self.coeffs.v_hat_u, u),
        )
    }

    /// `(‖Π‖_HS, ‖P‖_HS)` from `tr(πΦπΦ)` and `tr(pΨpΨ)`.
    pub fn hs_norms(&self) -> Result<(f64, f64)> {
        let phi = gram(&self.kernels.z, &self.anchors.z, None)?;
        let psi = gram(&self.kernels.x, &self.anchors.x, None)?;
        Ok((hs_norm(self.pi.as_matrix(), &phi.entries), hs_norm(self.p.as_matrix(), &psi.entries)))
    }

    /// `½(‖Π‖²_HS + ‖P‖²_HS) − ρ + λα`.
    pub fn objective(&self) -> Result<f64> {
        let (a, b) = self.hs_norms()?;
        Ok(0.5 * (a * a + b * b) - self.rho + self.lambda * self.alpha)
    }

    /// Projects `p − ε ĉĉᵀ` onto the PSD cone, a stronger storage floor than
    /// the pointwise rows enforced during learning.
    pub fn storage_floor_report(&self) -> Result<StorageFloorReport> {
        let c = DVector::from_column_slice(&self.coeffs.c_hat);
        let m = self.p.as_matrix() - (&c * c.transpose()) * self.storage_weight;
        let m = SymMatrix::new(m)?;
        let projected = psd_project(&m)?;
        Ok(StorageFloorReport {
            min_eigenvalue: m.min_eigenvalue(),
            projection_distance: (projected.as_matrix() - m.as_matrix()).norm(),
            projected,
        })
    }

    /// Same certificate with `(π, p, ρ)` multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        RkhsCertificate { pi: self.pi.scaled(c), p: self.p.scaled(c), rho: self.rho * c, ..self.clone() }
    }
}

/// `sqrt(tr(M G M G))`, clamped at zero against rounding.
pub fn hs_norm(m: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let mg = m * g;
    mg.component_mul(&mg.transpose()).sum().max(0.0).sqrt()
}

/// `s(z_t) + V(x_t) − V(x_{t+1})`.
pub fn margin_rkhs(cert: &RkhsCertificate, sample: &Sample) -> f64 {
    cert.supply_value(&sample.z) + cert.storage_value(&sample.x) - cert.storage_value(&sample.x_next)
}

/// Left sides of the dissipation rows, `φ_tᵀπφ_t + ψ_tᵀpψ_t − ψ'_tᵀpψ'_t`.
pub fn gram_form_margins(grams: &GramSet, pi: &DMatrix<f64>, p: &DMatrix<f64>) -> Vec<f64> {
    (0..grams.len())
        .map(|t| {
            let phi_t = grams.phi.entries.column(t);
            let psi_t = grams.psi.entries.column(t);
            let psi_n = grams.psi_next(t);
            phi_t.dot(&(pi * phi_t)) + psi_t.dot(&(p * psi_t)) - psi_n.dot(&(p * &psi_n))
        })
        .collect()
}

/// Learns an RKHS certificate from explicit training samples.
pub fn learn_rkhs_samples(samples: &[Sample], opts: &RkhsOptions, cfg: &SolverConfig) -> Result<RkhsCertificate> {
    check_samples(samples)?;
    opts.program_options().validate()?;
    let kernels = opts.kernels.unwrap_or_else(|| KernelSet::gaussian_median(samples));
    let grams = assemble_grams_with(samples, &kernels, opts.anchors)?;
    let coeffs = fit_coefficient_set(&grams, opts.ridge)?;
    let prog = assemble_program(&grams, &coeffs, &opts.program_options(), opts.formulation)?;
    let sol = solve(&prog.program, cfg)?.require_optimal()?;
    let coef = prog.unpack(&sol.variables);
    Ok(RkhsCertificate {
        kernels,
        anchors: AnchorSet {
            z: grams.phi.anchors,
            x: grams.psi.anchors,
            y: grams.phi_y.anchors,
            u: grams.phi_u.anchors,
        },
        pi: SymMatrix::from_matrix_unchecked(coef.pi),
        p: SymMatrix::from_matrix_unchecked(coef.p),
        coeffs,
        rho: coef.rho,
        alpha: coef.alpha,
        lambda: opts.lambda,
        eta: opts.eta,
        storage_weight: opts.storage_weight,
    })
}

/// Learns `(π, p, ρ, α)` from the training split of `dataset`.
pub fn learn_rkhs(dataset: &Dataset, opts: &RkhsOptions, cfg: &SolverConfig) -> Result<RkhsCertificate> {
    learn_rkhs_samples(&flatten_training(dataset), opts, cfg)
}

#[derive(Serialize, Deserialize)]
struct RkhsWire {
    #[serde(rename = "type")]
    kind: String,
    #[serde(rename = "T")]
    t: usize,
    kernels: KernelSet,
    anchors: AnchorSet,
    pi: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
    c_hat: Vec<f64>,
    v_hat_y: Vec<f64>,
    v_hat_u: Vec<f64>,
    rho: f64,
    alpha: f64,
    lambda: f64,
    ridge: f64,
    eta: f64,
    #[serde(default = "default_storage_weight")]
    epsilon: f64,
}

fn default_storage_weight() -> f64 {
    DEFAULT_STORAGE_WEIGHT
}

impl From<RkhsCertificate> for RkhsWire {
    fn from(c: RkhsCertificate) -> Self {
        RkhsWire {
            kind: "rkhs".into(),
            t: c.anchors.z.len(),
            kernels: c.kernels,
            pi: matrix_to_rows(c.pi.as_matrix()),
            p: matrix_to_rows(c.p.as_matrix()),
            anchors: c.anchors,
            c_hat: c.coeffs.c_hat,
            v_hat_y: c.coeffs.v_hat_y,
            v_hat_u: c.coeffs.v_hat_u,
            rho: c.rho,
            alpha: c.alpha,
            lambda: c.lambda,
            ridge: c.coeffs.ridge,
            eta: c.eta,
            epsilon: c.storage_weight,
        }
    }
}

impl TryFrom<RkhsWire> for RkhsCertificate {
    type Error = String;

    fn try_from(w: RkhsWire) -> std::result::Result<Self, String> {
        if w.kind != "rkhs" {
            return Err(format!("expected type \"rkhs\", found {:?}", w.kind));
        }
        let a = &w.anchors;
        let nx = a.x.len();
        if a.z.len() != w.t || a.y.len() != w.t || a.u.len() != w.t || nx < w.t {
            return Err(format!(
                "anchor counts z={}, x={nx}, y={}, u={} do not match T={}",
                a.z.len(),
                a.y.len(),
                a.u.len(),
                w.t
            ));
        }
        if w.c_hat.len() != nx || w.v_hat_y.len() != w.t || w.v_hat_u.len() != w.t {
            return Err("coefficient vector lengths do not match the anchors".into());
        }
        let sym = |rows: &[Vec<f64>], n: usize, what: &str| -> std::result::Result<SymMatrix, String> {
            let m = rows_to_matrix(rows).map_err(|e| format!("{what}: {e}"))?;
            if m.shape() != (n, n) {
                return Err(format!("{what} is {:?}, expected {n}x{n}", m.shape()));
            }
            SymMatrix::new(m).map_err(|e| format!("{what}: {e}"))
        };
        Ok(RkhsCertificate {
            kernels: w.kernels,
            pi: sym(&w.pi, w.t, "pi")?,
            p: sym(&w.p, nx, "p")?,
            anchors: w.anchors,
            coeffs: CoefficientSet { c_hat: w.c_hat, v_hat_y: w.v_hat_y, v_hat_u: w.v_hat_u, ridge: w.ridge },
            rho: w.rho,
            alpha: w.alpha,
            lambda: w.lambda,
            eta: w.eta,
            storage_weight: w.epsilon,
        })
    }
}
