//! Dense convex solver for quadratic objectives with affine inequality rows
//! and positive-semidefinite matrix blocks.
//!
//! Every constraint is written as `A v ∈ C` with `C` a product of half-lines
//! and shifted PSD cones, held in scaled half-vectorized (`svec`)
//! coordinates so that Euclidean and Frobenius geometry agree. Two methods
//! share this form: a primal-dual interior-point method (the default) and an
//! operator-splitting (ADMM) iteration whose `v` update is a cached Cholesky
//! solve and whose `z` update is a projection onto `C`. ADMM results on
//! programs without PSD blocks can be polished by solving the KKT system on
//! the detected active set.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, LearnFailure, Result};
use crate::linalg::{symmetrize, SymMatrix};

mod interior;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Nearest positive-semidefinite matrix in Frobenius norm.
///
/// Negative eigenvalues are clamped to zero. A matrix whose computed
/// eigenvalues are all nonnegative is returned unchanged; on the output of a
/// previous projection the zero eigenvalues may round slightly negative, so
/// repeating the projection agrees to rounding rather than bit for bit.
pub fn psd_project(m: &SymMatrix) -> Result<SymMatrix> {
    if m.as_matrix().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    Ok(SymMatrix::from_matrix_unchecked(project_psd_matrix(m.as_matrix())))
}

pub(crate) fn project_psd_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return m.clone();
    }
    let mut out = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 0.0 {
            let q = eig.eigenvectors.column(k);
            out.ger(l, &q, &q, 1.0);
        }
    }
    symmetrize(&out)
}

/// One variable's contribution to a PSD block: `coeff · v[var]` is added to
/// entry `(row, col)` and, off the diagonal, to `(col, row)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockTerm {
    pub row: usize,
    pub col: usize,
    pub var: usize,
    pub coeff: f64,
}

/// Affine symmetric matrix `M(v) = offset + Σ terms` constrained to be PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdBlock {
    pub dim: usize,
    pub offset: DMatrix<f64>,
    pub terms: Vec<BlockTerm>,
}

impl PsdBlock {
    pub fn new(dim: usize) -> Self {
        PsdBlock { dim, offset: DMatrix::zeros(dim, dim), terms: Vec::new() }
    }

    pub fn with_offset(offset: DMatrix<f64>) -> Self {
        PsdBlock { dim: offset.nrows(), offset, terms: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, var: usize, coeff: f64) {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        self.terms.push(BlockTerm { row, col, var, coeff });
    }

    /// Evaluates `M(v)`.
    pub fn evaluate(&self, v: &[f64]) -> DMatrix<f64> {
        let mut m = self.offset.clone();
        for t in &self.terms {
            let x = t.coeff * v[t.var];
            m[(t.row, t.col)] += x;
            if t.row != t.col {
                m[(t.col, t.row)] += x;
            }
        }
        m
    }

    fn svec_len(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }
}

/// `min ½ vᵀHv + gᵀv  s.t.  A v ≥ b,  M_k(v) ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram {
    pub n_vars: usize,
    pub objective_quadratic: DMatrix<f64>,
    pub objective_linear: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub psd_blocks: Vec<PsdBlock>,
}

impl ConeProgram {
    /// Program with the given objective and no constraints.
    pub fn new(objective_quadratic: DMatrix<f64>, objective_linear: DVector<f64>) -> Self {
        let n = objective_linear.len();
        ConeProgram {
            n_vars: n,
            objective_quadratic,
            objective_linear,
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            psd_blocks: Vec::new(),
        }
    }

    /// Replaces the inequality rows with `rows · v ≥ rhs`.
    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.ineq_matrix = a;
        self.ineq_rhs = b;
        self
    }

    pub fn with_block(mut self, block: PsdBlock) -> Self {
        self.psd_blocks.push(block);
        self
    }

    pub fn n_rows(&self) -> usize {
        self.ineq_matrix.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars;
        let bad = |msg: String| Err(Error::InvalidProgram(msg));
        if self.objective_quadratic.shape() != (n, n) {
            return bad(format!(
                "objective_quadratic is {:?}, expected ({n}, {n})",
                self.objective_quadratic.shape()
            ));
        }
        if self.objective_linear.len() != n {
            return bad(format!("objective_linear has length {}, expected {n}", self.objective_linear.len()));
        }
        if self.ineq_matrix.ncols() != n || self.ineq_matrix.nrows() != self.ineq_rhs.len() {
            return bad(format!(
                "inequality matrix {:?} inconsistent with rhs length {} and {n} variables",
                self.ineq_matrix.shape(),
                self.ineq_rhs.len()
            ));
        }
        let finite = self.objective_quadratic.iter().all(|v| v.is_finite())
            && self.objective_linear.iter().all(|v| v.is_finite())
            && self.ineq_matrix.iter().all(|v| v.is_finite())
            && self.ineq_rhs.iter().all(|v| v.is_finite());
        if !finite {
            return bad("non-finite data".into());
        }
        let h = &self.objective_quadratic;
        if (h - h.transpose()).amax() > 1e-12 * h.amax().max(1.0) {
            return bad("objective_quadratic is not symmetric".into());
        }
        for (k, blk) in self.psd_blocks.iter().enumerate() {
            if blk.offset.shape() != (blk.dim, blk.dim) {
                return bad(format!("psd block {k}: offset shape mismatch"));
            }
            for t in &blk.terms {
                if t.row >= blk.dim || t.col >= blk.dim || t.var >= n || !t.coeff.is_finite() {
                    return bad(format!("psd block {k}: term {t:?} out of range"));
                }
            }
        }
        // H ⪰ -1e-10‖H‖ I is equivalent to H + 1e-10‖H‖ I admitting a
        // Cholesky factor (up to the boundary case).
        if n > 0 {
            let shift = 1e-10 * h.norm().max(f64::MIN_POSITIVE);
            let shifted = symmetrize(h) + DMatrix::identity(n, n) * shift;
            if Cholesky::new(shifted).is_none() {
                return bad("objective_quadratic is not positive semidefinite".into());
            }
        }
        Ok(())
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        0.5 * v.dot(&(&self.objective_quadratic * &v)) + self.objective_linear.dot(&v)
    }

    /// Largest violation `max_i (b_i − a_i·v)⁺` of the inequality rows.
    pub fn max_violation(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        let av = &self.ineq_matrix * v;
        av.iter().zip(self.ineq_rhs.iter()).map(|(a, b)| (b - a).max(0.0)).fold(0.0, f64::max)
    }

    /// Largest negative eigenvalue magnitude over all PSD blocks.
    pub fn cone_violation(&self, v: &[f64]) -> f64 {
        self.psd_blocks
            .iter()
            .map(|b| (-crate::linalg::min_eigenvalue(&b.evaluate(v))).max(0.0))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub cone_tol: f64,
    /// Initial ADMM penalty; adapted during the run.
    pub penalty: f64,
    /// Kept for reproducible configs. The iteration starts from zero and uses no
    /// randomness, so the seed does not change the result.
    pub seed: u64,
    /// Active-set polishing for programs without PSD blocks (ADMM only).
    pub polish: bool,
    pub method: SolverMethod,
}

/// Interior-point is the default; ADMM trades accuracy for cheap iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    #[default]
    InteriorPoint,
    Admm,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 50_000,
            primal_tol: 1e-8,
            dual_tol: 1e-8,
            cone_tol: 1e-8,
            penalty: 0.1,
            seed: 0,
            polish: true,
            method: SolverMethod::InteriorPoint,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let tols = [self.primal_tol, self.dual_tol, self.cone_tol, self.penalty];
        if tols.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidInput("solver tolerances and penalty must be positive".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidInput("max_iters must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub cone: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub variables: Vec<f64>,
    pub objective_value: f64,
    pub status: SolveStatus,
    pub kkt_residuals: KktResiduals,
    pub iterations: usize,
}

impl Solution {
    /// Passes optimal solutions through and turns the other statuses into
    /// [`Error::LearnFailed`].
    pub fn require_optimal(self) -> Result<Self> {
        match self.status {
            SolveStatus::Optimal => Ok(self),
            SolveStatus::Infeasible => Err(Error::LearnFailed(LearnFailure::Infeasible {
                primal_residual: self.kkt_residuals.primal,
                iterations: self.iterations,
            })),
            SolveStatus::MaxIters => Err(Error::LearnFailed(LearnFailure::NotConverged {
                primal: self.kkt_residuals.primal,
                dual: self.kkt_residuals.dual,
                cone: self.kkt_residuals.cone,
                iterations: self.iterations,
            })),
        }
    }
}

/// Row-normalized constraint set `Â v ∈ C`.
struct Scaled {
    a: DMatrix<f64>,
    lower: Vec<f64>,
    n_lin: usize,
    blocks: Vec<ScaledBlock>,
}

struct ScaledBlock {
    start: usize,
    dim: usize,
    /// Scaled constant offset in matrix form.
    offset: DMatrix<f64>,
    offset_svec: Vec<f64>,
}

fn svec_index_pairs(dim: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(dim * (dim + 1) / 2);
    for c in 0..dim {
        for r in 0..=c {
            out.push((r, c));
        }
    }
    out
}

fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    svec_index_pairs(m.nrows())
        .into_iter()
        .map(|(r, c)| if r == c { m[(r, c)] } else { SQRT2 * m[(r, c)] })
        .collect()
}

fn smat(s: &[f64], dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for (k, (r, c)) in svec_index_pairs(dim).into_iter().enumerate() {
        if r == c {
            m[(r, c)] = s[k];
        } else {
            m[(r, c)] = s[k] / SQRT2;
            m[(c, r)] = s[k] / SQRT2;
        }
    }
    m
}

impl Scaled {
    fn build(p: &ConeProgram) -> Result<Self> {
        let n = p.n_vars;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut lower = Vec::new();
        for i in 0..p.n_rows() {
            let row = p.ineq_matrix.row(i);
            let norm = row.norm();
            if norm == 0.0 {
                if p.ineq_rhs[i] > 0.0 {
                    return Err(Error::InvalidProgram(format!(
                        "row {i} reads 0 ≥ {} and can never hold",
                        p.ineq_rhs[i]
                    )));
                }
                continue;
            }
            rows.push(row.iter().map(|a| a / norm).collect());
            lower.push(p.ineq_rhs[i] / norm);
        }
        let n_lin = rows.len();
        let mut blocks = Vec::new();
        for blk in &p.psd_blocks {
            let len = blk.svec_len();
            let pairs = svec_index_pairs(blk.dim);
            let mut index = vec![vec![usize::MAX; blk.dim]; blk.dim];
            for (k, &(r, c)) in pairs.iter().enumerate() {
                index[r][c] = k;
            }
            let mut local = DMatrix::<f64>::zeros(len, n);
            for t in &blk.terms {
                let k = index[t.row][t.col];
                let w = if t.row == t.col { 1.0 } else { SQRT2 };
                local[(k, t.var)] += w * t.coeff;
            }
            let norm = local.norm();
            let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
            let start = rows.len();
            for k in 0..len {
                rows.push(local.row(k).iter().map(|a| a * scale).collect());
            }
            let offset = &blk.offset * scale;
            blocks.push(ScaledBlock { start, dim: blk.dim, offset_svec: svec(&offset), offset });
        }
        let m = rows.len();
        let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
        Ok(Scaled { a, lower, n_lin, blocks })
    }

    fn project(&self, w: &mut DVector<f64>) {
        for i in 0..self.n_lin {
            if w[i] < self.lower[i] {
                w[i] = self.lower[i];
            }
        }
        for b in &self.blocks {
            let len = b.dim * (b.dim + 1) / 2;
            let s: Vec<f64> = w.rows(b.start, len).iter().copied().collect();
            let m = smat(&s, b.dim) + &b.offset;
            let proj = project_psd_matrix(&m);
            let ps = svec(&proj);
            for k in 0..len {
                w[b.start + k] = ps[k] - b.offset_svec[k];
            }
        }
    }

    /// Whether the multiplier increment `dy` proves `{v : Â v ∈ C}` empty:
    /// `dy` lies in the polar of the recession cone of `C`, `Âᵀ dy ≈ 0` and
    /// `sup_{z ∈ C} dyᵀz < 0`.
    fn certifies_infeasibility(&self, dy: &DVector<f64>, at: &DMatrix<f64>) -> bool {
        let scale = dy.amax();
        if !(scale > 0.0) {
            return false;
        }
        let d = dy / scale;
        let tol = 1e-7;
        if (0..self.n_lin).any(|i| d[i] > tol) {
            return false;
        }
        for b in &self.blocks {
            let len = b.dim * (b.dim + 1) / 2;
            let s: Vec<f64> = d.rows(b.start, len).iter().copied().collect();
            if crate::linalg::max_eigenvalue(&smat(&s, b.dim)) > tol {
                return false;
            }
        }
        inf_norm(&(at * &d)) <= tol && self.support(&d) < -tol
    }

    /// Support function `sup_{z ∈ C} yᵀz`, finite when `y` lies in the
    /// recession cone's polar (which the iteration maintains).
    fn support(&self, y: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n_lin {
            s += y[i] * self.lower[i];
        }
        for b in &self.blocks {
            for (k, o) in b.offset_svec.iter().enumerate() {
                s -= y[b.start + k] * o;
            }
        }
        s
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
}

impl Factor {
    fn new(h: &DMatrix<f64>, ata: &DMatrix<f64>, sigma: f64, rho: f64) -> Result<Self> {
        let n = h.nrows();
        let k = h + ata * rho + DMatrix::identity(n, n) * sigma;
        let chol = Cholesky::new(k)
            .ok_or_else(|| Error::InvalidProgram("ADMM system matrix is not positive definite".into()))?;
        Ok(Factor { chol })
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

struct Iterate {
    x: DVector<f64>,
    residuals: KktResiduals,
    gap_ok: bool,
}

/// Solves a [`ConeProgram`].
///
/// Returns `Err` only for malformed programs; non-convergence and detected
/// infeasibility are reported through [`Solution::status`].
pub fn solve(problem: &ConeProgram, cfg: &SolverConfig) -> Result<Solution> {
    problem.validate()?;
    cfg.validate()?;
    let scaled = Scaled::build(problem)?;
    match cfg.method {
        SolverMethod::InteriorPoint => interior::solve(problem, &scaled, cfg),
        SolverMethod::Admm => solve_admm(problem, &scaled, cfg),
    }
}

fn solve_admm(problem: &ConeProgram, scaled: &Scaled, cfg: &SolverConfig) -> Result<Solution> {
    let n = problem.n_vars;
    let a = &scaled.a;
    let m = a.nrows();
    let h = symmetrize(&problem.objective_quadratic);
    let g = &problem.objective_linear;
    let at = a.transpose();
    let ata = &at * a;

    let sigma = 1e-6;
    let relax = 1.6;
    let mut rho = cfg.penalty;
    let mut factor = Factor::new(&h, &ata, sigma, rho)?;

    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(m);
    scaled.project(&mut z);
    let mut y = DVector::zeros(m);

    let check_every = 5;
    let adapt_every = 50;
    let mut y_prev = DVector::zeros(m);
    let mut polish_level = f64::INFINITY;
    let mut last: Option<Iterate> = None;

    for k in 1..=cfg.max_iters {
        let rhs = &x * sigma - g + &at * (&z * rho - &y);
        let xt = factor.solve(&rhs);
        let zt = a * &xt;
        x = &xt * relax + &x * (1.0 - relax);
        let zh = &zt * relax + &z * (1.0 - relax);
        let mut znew = &zh + &y / rho;
        scaled.project(&mut znew);
        y += (&zh - &znew) * rho;
        z = znew;

        if k % check_every != 0 && k != cfg.max_iters {
            continue;
        }
        let ax = a * &x;
        let hx = &h * &x;
        let aty = &at * &y;
        let rp = inf_norm(&(&ax - &z));
        let rd_vec = &hx + g + &aty;
        let rd = inf_norm(&rd_vec);
        let d_scale = 1.0 + inf_norm(&hx).max(inf_norm(g)).max(inf_norm(&aty));
        let p_scale = inf_norm(&ax).max(inf_norm(&z)).max(1e-12);

        if rp <= cfg.primal_tol && rd <= cfg.dual_tol * d_scale {
            let it = evaluate(problem, scaled, &h, &x, &y, cfg);
            if accept(&it, cfg) {
                return Ok(finish(problem, it, SolveStatus::Optimal, k));
            }
            last = Some(it);
        }

        // Active-set polishing once ADMM is in the right neighbourhood.
        if cfg.polish && scaled.blocks.is_empty() && m > 0 {
            let level = rp.max(rd / d_scale);
            if level <= 1e-4 && level <= 0.1 * polish_level {
                polish_level = level;
                if let Some(it) = polish(problem, scaled, &h, &x, &z, &y, cfg) {
                    if accept(&it, cfg) {
                        return Ok(finish(problem, it, SolveStatus::Optimal, k));
                    }
                }
            }
        }

        if rp > cfg.primal_tol && scaled.certifies_infeasibility(&(&y - &y_prev), &at) {
            let it = evaluate(problem, scaled, &h, &x, &y, cfg);
            return Ok(finish(problem, it, SolveStatus::Infeasible, k));
        }
        y_prev.copy_from(&y);

        if k % adapt_every == 0 && rd > 0.0 && rp > 0.0 {
            let ratio = ((rp / p_scale) / (rd / d_scale)).sqrt();
            let new_rho = (rho * ratio).clamp(1e-6, 1e6);
            if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                rho = new_rho;
                factor = Factor::new(&h, &ata, sigma, rho)?;
            }
        }
    }

    let mut it = evaluate(problem, scaled, &h, &x, &y, cfg);
    if cfg.polish && scaled.blocks.is_empty() && m > 0 {
        if let Some(p) = polish(problem, scaled, &h, &x, &z, &y, cfg) {
            if accept(&p, cfg) {
                return Ok(finish(problem, p, SolveStatus::Optimal, cfg.max_iters));
            }
        }
    }
    if let Some(prev) = last {
        if prev.residuals.primal < it.residuals.primal {
            it = prev;
        }
    }
    Ok(finish(problem, it, SolveStatus::MaxIters, cfg.max_iters))
}

fn accept(it: &Iterate, cfg: &SolverConfig) -> bool {
    it.residuals.primal <= cfg.primal_tol
        && it.residuals.dual <= cfg.dual_tol
        && it.residuals.cone <= cfg.cone_tol
        && it.gap_ok
}

fn finish(problem: &ConeProgram, it: Iterate, status: SolveStatus, iterations: usize) -> Solution {
    let variables: Vec<f64> = it.x.iter().copied().collect();
    Solution {
        objective_value: problem.objective(&variables),
        variables,
        status,
        kkt_residuals: it.residuals,
        iterations,
    }
}

/// Residuals of `(x, y)` measured on the original (unscaled) program.
///
/// `y` is the scaled-space multiplier; the dual residual is reported
/// relative to the magnitude of the terms that make it up.
fn evaluate(
    problem: &ConeProgram,
    scaled: &Scaled,
    h: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    cfg: &SolverConfig,
) -> Iterate {
    let xs: Vec<f64> = x.iter().copied().collect();
    let primal = problem.max_violation(&xs);
    let cone = problem.cone_violation(&xs);
    let hx = h * x;
    let aty = scaled.a.transpose() * y;
    let g = &problem.objective_linear;
    let rd = inf_norm(&(&hx + g + &aty));
    let d_scale = 1.0 + inf_norm(&hx).max(inf_norm(g)).max(inf_norm(&aty));
    let dual = rd / d_scale;
    let primal_obj = x.dot(&hx) + g.dot(x);
    let gap = primal_obj + scaled.support(y);
    let obj = 0.5 * x.dot(&hx) + g.dot(x);
    // Multipliers must lie in the polar of C's recession cone.
    let sign_ok = (0..scaled.n_lin).all(|i| y[i] <= 1e-12 * (1.0 + y.amax()));
    let gap_ok = sign_ok && gap.abs() <= cfg.dual_tol * (1.0 + obj.abs()) * 10.0;
    Iterate { x: x.clone(), residuals: KktResiduals { primal, dual, cone }, gap_ok }
}

/// Solves the KKT system restricted to the rows ADMM reports as active and
/// refines it iteratively. Returns `None` when the active-set guess is
/// inconsistent (infeasible point or wrong-sign multipliers).
fn polish(
    problem: &ConeProgram,
    scaled: &Scaled,
    h: &DMatrix<f64>,
    _x: &DVector<f64>,
    z: &DVector<f64>,
    y: &DVector<f64>,
    cfg: &SolverConfig,
) -> Option<Iterate> {
    let n = problem.n_vars;
    let active: Vec<usize> =
        (0..scaled.n_lin).filter(|&i| z[i] - scaled.lower[i] < -y[i]).collect();
    let na = active.len();
    let a_l = DMatrix::from_fn(na, n, |r, c| scaled.a[(active[r], c)]);
    let b_l = DVector::from_fn(na, |r, _| scaled.lower[active[r]]);
    let g = &problem.objective_linear;

    let delta = 1e-9 * h.amax().max(1.0);
    // Eliminating dy keeps the factorization n×n and well defined for
    // degenerate active sets with more rows than variables.
    let kreg = symmetrize(&(h + DMatrix::identity(n, n) * delta + a_l.tr_mul(&a_l) / delta));
    let kchol = Cholesky::new(kreg)?;

    // Regularized solve of [[H+δI, Aᵀ], [A, −δI]] [dx; dy] = [r1; r2].
    let reg_solve = |r1: &DVector<f64>, r2: &DVector<f64>| {
        let dx = kchol.solve(&(r1 + a_l.tr_mul(r2) / delta));
        let dy = (&a_l * &dx - r2) / delta;
        (dx, dy)
    };
    let (mut px, mut py) = reg_solve(&(-g), &b_l);
    for _ in 0..25 {
        let r1 = -g - h * &px - a_l.transpose() * &py;
        let r2 = &b_l - &a_l * &px;
        if inf_norm(&r1).max(inf_norm(&r2)) <= 1e-15 * (1.0 + inf_norm(g)) {
            break;
        }
        let (dx, dy) = reg_solve(&r1, &r2);
        px += dx;
        py += dy;
    }

    let mut full_y = DVector::zeros(scaled.a.nrows());
    for (r, &i) in active.iter().enumerate() {
        full_y[i] = py[r];
    }
    let it = evaluate(problem, scaled, h, &px, &full_y, cfg);
    (it.residuals.primal <= cfg.primal_tol).then_some(it)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn psd_project_clamps_negative_eigenvalue() {
        let m = SymMatrix::from_diagonal(&[1.0, -1.0]);
        let p = psd_project(&m).unwrap();
        assert_eq!(p, SymMatrix::from_diagonal(&[1.0, 0.0]));
    }

    #[test]
    fn psd_project_rejects_non_finite() {
        let m = SymMatrix::from_matrix_unchecked(DMatrix::from_element(2, 2, f64::NAN));
        assert!(matches!(psd_project(&m), Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn psd_project_keeps_psd_input() {
        let m = SymMatrix::from_row_slice(2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(psd_project(&m).unwrap(), m);
    }

    #[test]
    fn svec_roundtrip_preserves_inner_product() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let b = DMatrix::from_row_slice(3, 3, &[0.5, -1.0, 0.0, -1.0, 2.0, 1.5, 0.0, 1.5, -3.0]);
        let sa = svec(&a);
        let sb = svec(&b);
        let dot: f64 = sa.iter().zip(&sb).map(|(x, y)| x * y).sum();
        assert!((dot - a.dot(&b)).abs() < 1e-12);
        assert_eq!(smat(&sa, 3), a);
    }

    #[test]
    fn scalar_qp_with_nonnegativity() {
        // min ½x² − x  s.t. x ≥ 0
        let p = ConeProgram::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, -1.0))
            .with_inequalities(DMatrix::from_element(1, 1, 1.0), DVector::zeros(1));
        let s = solve(&p, &cfg()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.variables[0] - 1.0).abs() < 1e-6);
        assert!((s.objective_value + 0.5).abs() < 1e-8);
    }

    #[test]
    fn halfspace_projection() {
        // min ½‖v‖² s.t. v₁ ≥ 2
        let n = 3;
        let mut a = DMatrix::zeros(1, n);
        a[(0, 0)] = 1.0;
        let p = ConeProgram::new(DMatrix::identity(n, n), DVector::zeros(n))
            .with_inequalities(a, DVector::from_element(1, 2.0));
        let s = solve(&p, &cfg()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.variables[0] - 2.0).abs() < 1e-7);
        assert!(s.variables[1].abs() < 1e-7 && s.variables[2].abs() < 1e-7);
    }

    #[test]
    fn psd_block_nearest_point() {
        // min ½‖X − C‖²_F over symmetric 2×2 X ⪰ 0, with C = diag(1, −1):
        // answer diag(1, 0). Variables (x11, x12, x22) with off-diagonal
        // weight 2 in the Frobenius norm.
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 1.0]));
        let g = DVector::from_vec(vec![-1.0, 0.0, 1.0]);
        let mut blk = PsdBlock::new(2);
        blk.push(0, 0, 0, 1.0);
        blk.push(0, 1, 1, 1.0);
        blk.push(1, 1, 2, 1.0);
        let p = ConeProgram::new(h, g).with_block(blk);
        let s = solve(&p, &cfg()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal, "{s:?}");
        assert!((s.variables[0] - 1.0).abs() < 1e-6);
        assert!(s.variables[1].abs() < 1e-6);
        assert!(s.variables[2].abs() < 1e-6);
    }

    #[test]
    fn detects_infeasible_rows() {
        // x ≥ 1 and −x ≥ 0
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let p = ConeProgram::new(DMatrix::from_element(1, 1, 1.0), DVector::zeros(1)).with_inequalities(a, b);
        let s = solve(&p, &cfg()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        let p = ConeProgram::new(DMatrix::identity(2, 2), DVector::zeros(3));
        assert!(matches!(solve(&p, &cfg()), Err(Error::InvalidProgram(_))));
    }

    #[test]
    fn rejects_indefinite_objective() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let p = ConeProgram::new(h, DVector::zeros(2));
        assert!(matches!(solve(&p, &cfg()), Err(Error::InvalidProgram(_))));
    }

    #[test]
    fn solve_is_deterministic() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = DVector::from_vec(vec![-1.0, 0.3]);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, -0.5]);
        let p = ConeProgram::new(h, g).with_inequalities(a, b);
        let s1 = solve(&p, &cfg()).unwrap();
        let s2 = solve(&p, &cfg()).unwrap();
        assert_eq!(s1, s2);
    }
}
