//! Primal-dual interior-point method with Nesterov-Todd scaling and a
//! Mehrotra predictor-corrector step.
//!
//! The scaled program is written as `min ½xᵀHx + gᵀx` subject to
//! `Gx + s = h`, `s ∈ K`, with `G = −Â` and `K` the product of the
//! nonnegative orthant (one entry per inequality row) and one PSD cone per
//! block in `svec` coordinates.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{accept, evaluate, finish, inf_norm, smat, svec, ConeProgram, Iterate, Scaled, Solution, SolveStatus, SolverConfig};
use crate::error::Result;
use crate::linalg::symmetrize;

/// Interior-point iterations are capped independently of `max_iters`,
/// which is sized for first-order methods.
const MAX_ITERS: usize = 200;
const STEP_FRACTION: f64 = 0.99;

struct Cone {
    n_lin: usize,
    /// `(start, dim)` of each PSD block.
    blocks: Vec<(usize, usize)>,
}

impl Cone {
    fn new(scaled: &Scaled) -> Self {
        Cone { n_lin: scaled.n_lin, blocks: scaled.blocks.iter().map(|b| (b.start, b.dim)).collect() }
    }

    fn degree(&self) -> f64 {
        (self.n_lin + self.blocks.iter().map(|b| b.1).sum::<usize>()) as f64
    }

    fn block<'v>(&self, v: &'v DVector<f64>, k: usize) -> (usize, usize, DMatrix<f64>) {
        let (start, dim) = self.blocks[k];
        let len = dim * (dim + 1) / 2;
        let s: Vec<f64> = v.rows(start, len).iter().copied().collect();
        (start, len, smat(&s, dim))
    }

    fn put(v: &mut DVector<f64>, start: usize, m: &DMatrix<f64>) {
        for (k, e) in svec(m).into_iter().enumerate() {
            v[start + k] = e;
        }
    }

    fn min_eig(&self, v: &DVector<f64>) -> f64 {
        let mut out = f64::INFINITY;
        for i in 0..self.n_lin {
            out = out.min(v[i]);
        }
        for k in 0..self.blocks.len() {
            let (_, _, m) = self.block(v, k);
            out = out.min(crate::linalg::min_eigenvalue(&m));
        }
        out
    }

    fn add_identity(&self, v: &mut DVector<f64>, t: f64) {
        for i in 0..self.n_lin {
            v[i] += t;
        }
        for k in 0..self.blocks.len() {
            let (start, _, m) = self.block(v, k);
            let dim = m.nrows();
            Self::put(v, start, &(m + DMatrix::identity(dim, dim) * t));
        }
    }

    fn identity(&self, m: usize) -> DVector<f64> {
        let mut e = DVector::zeros(m);
        self.add_identity(&mut e, 1.0);
        e
    }

    /// Jordan product `u ∘ v`: entrywise on the orthant, `(UV + VU)/2` on
    /// PSD blocks.
    fn jordan(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = u.component_mul(v);
        for k in 0..self.blocks.len() {
            let (start, _, mu) = self.block(u, k);
            let (_, _, mv) = self.block(v, k);
            Self::put(&mut out, start, &symmetrize(&(&mu * &mv)));
        }
        out
    }

    /// Largest `α ≤ 1` keeping `v + α dv` in the cone, for interior `v`.
    fn max_step(&self, v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
        let mut alpha: f64 = 1.0;
        for i in 0..self.n_lin {
            if dv[i] < 0.0 {
                alpha = alpha.min(-v[i] / dv[i]);
            }
        }
        for k in 0..self.blocks.len() {
            let (_, _, m) = self.block(v, k);
            let (_, _, dm) = self.block(dv, k);
            let Some(chol) = Cholesky::new(m) else { return 0.0 };
            let l = chol.l();
            let Some(linv) = l.clone().try_inverse() else { return 0.0 };
            let lo = crate::linalg::min_eigenvalue(&symmetrize(&(&linv * dm * linv.transpose())));
            if lo < 0.0 {
                alpha = alpha.min(-1.0 / lo);
            }
        }
        alpha
    }
}

/// Nesterov-Todd scaling `W` with `W z = W⁻ᵀ s = λ`.
struct Scaling {
    w: Vec<f64>,
    r: Vec<DMatrix<f64>>,
    rti: Vec<DMatrix<f64>>,
    lambda: DVector<f64>,
    /// Diagonal of `λ` on each block.
    lambda_blk: Vec<Vec<f64>>,
}

impl Scaling {
    fn new(cone: &Cone, s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let mut lambda = DVector::zeros(s.len());
        let mut w = Vec::with_capacity(cone.n_lin);
        for i in 0..cone.n_lin {
            if !(s[i] > 0.0 && z[i] > 0.0) {
                return None;
            }
            w.push((s[i] / z[i]).sqrt());
            lambda[i] = (s[i] * z[i]).sqrt();
        }
        let (mut r, mut rti, mut lambda_blk) = (Vec::new(), Vec::new(), Vec::new());
        for k in 0..cone.blocks.len() {
            let (start, _, sm) = cone.block(s, k);
            let (_, _, zm) = cone.block(z, k);
            let ls = Cholesky::new(sm)?.l();
            let lz = Cholesky::new(zm)?.l();
            let svd = (lz.transpose() * &ls).svd(true, true);
            let u = svd.u?;
            let v = svd.v_t?.transpose();
            let sig = svd.singular_values;
            if sig.iter().any(|x| !(*x > 0.0)) {
                return None;
            }
            let isq = DMatrix::from_diagonal(&sig.map(|x| 1.0 / x.sqrt()));
            r.push(&ls * &v * &isq);
            rti.push(&lz * &u * &isq);
            Cone::put(&mut lambda, start, &DMatrix::from_diagonal(&sig));
            lambda_blk.push(sig.iter().copied().collect());
        }
        Some(Scaling { w, r, rti, lambda, lambda_blk })
    }

    fn map(&self, cone: &Cone, v: &DVector<f64>, lin: impl Fn(f64, f64) -> f64, blk: impl Fn(usize, &DMatrix<f64>) -> DMatrix<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for i in 0..cone.n_lin {
            out[i] = lin(v[i], self.w[i]);
        }
        for k in 0..cone.blocks.len() {
            let (start, _, m) = cone.block(v, k);
            Cone::put(&mut out, start, &symmetrize(&blk(k, &m)));
        }
        out
    }

    /// `W v`.
    fn apply(&self, cone: &Cone, v: &DVector<f64>) -> DVector<f64> {
        self.map(cone, v, |x, w| w * x, |k, m| self.r[k].transpose() * m * &self.r[k])
    }

    /// `Wᵀ v`.
    fn apply_t(&self, cone: &Cone, v: &DVector<f64>) -> DVector<f64> {
        self.map(cone, v, |x, w| w * x, |k, m| &self.r[k] * m * self.r[k].transpose())
    }

    /// `W⁻ᵀ v`.
    fn apply_inv_t(&self, cone: &Cone, v: &DVector<f64>) -> DVector<f64> {
        self.map(cone, v, |x, w| x / w, |k, m| self.rti[k].transpose() * m * &self.rti[k])
    }

    /// `(WᵀW)⁻¹ v`.
    fn apply_inv_sq(&self, cone: &Cone, v: &DVector<f64>) -> DVector<f64> {
        self.map(cone, v, |x, w| x / (w * w), |k, m| {
            let t = &self.rti[k] * self.rti[k].transpose();
            &t * m * &t
        })
    }

    /// Solves `λ ∘ u = v` for `u`.
    fn lambda_div(&self, cone: &Cone, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for i in 0..cone.n_lin {
            out[i] = v[i] / self.lambda[i];
        }
        for k in 0..cone.blocks.len() {
            let (start, _, m) = cone.block(v, k);
            let l = &self.lambda_blk[k];
            let d = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| 2.0 * m[(i, j)] / (l[i] + l[j]));
            Cone::put(&mut out, start, &d);
        }
        out
    }
}

/// Inequality rows whose scaling weight `1/w²` exceeds this multiple of the
/// remaining Newton matrix scale are eliminated through a Schur complement
/// rather than added to the normal equations, which would otherwise swamp
/// the objective curvature as `μ → 0`.
const ACTIVE_RATIO: f64 = 1e4;

struct Newton<'a> {
    cone: &'a Cone,
    a: &'a DMatrix<f64>,
    scaling: &'a Scaling,
    /// Normal matrix over the objective, PSD blocks and inactive rows.
    k_in: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// Rows of `Â` with large weights, their excess weights `D` and the
    /// factor of `A K⁻¹ Aᵀ + D⁻¹`.
    act: DMatrix<f64>,
    act_d: DVector<f64>,
    k_inv_act_t: DMatrix<f64>,
    schur: Option<Cholesky<f64, Dyn>>,
}

impl<'a> Newton<'a> {
    fn new(cone: &'a Cone, a: &'a DMatrix<f64>, h: &DMatrix<f64>, scaling: &'a Scaling) -> Option<Self> {
        let n = a.ncols();
        let mut k = h.clone();
        for (blk, &(start, dim)) in cone.blocks.iter().enumerate() {
            let len = dim * (dim + 1) / 2;
            let ab = a.rows(start, len);
            let t = &scaling.rti[blk] * scaling.rti[blk].transpose();
            let mut dab = DMatrix::zeros(len, n);
            for j in 0..n {
                let col: Vec<f64> = ab.column(j).iter().copied().collect();
                let m = smat(&col, dim);
                let mapped = svec(&symmetrize(&(&t * m * &t)));
                for (r, v) in mapped.into_iter().enumerate() {
                    dab[(r, j)] = v;
                }
            }
            k += ab.transpose() * dab;
        }
        let base = k.diagonal().amax().max(1.0);
        let threshold = ACTIVE_RATIO * base;
        let (mut inactive, mut active) = (Vec::new(), Vec::new());
        for i in 0..cone.n_lin {
            let d = 1.0 / (scaling.w[i] * scaling.w[i]);
            if d > threshold {
                active.push(i);
            } else {
                inactive.push(i);
            }
        }
        // Active rows keep weight `threshold` in the factored matrix so it
        // stays well conditioned; only the excess goes through the Schur
        // complement.
        if cone.n_lin > 0 {
            let mut b = DMatrix::zeros(inactive.len() + active.len(), n);
            for (r, &i) in inactive.iter().enumerate() {
                b.row_mut(r).copy_from(&(a.row(i) / scaling.w[i]));
            }
            let cap = threshold.sqrt();
            for (r, &i) in active.iter().enumerate() {
                b.row_mut(inactive.len() + r).copy_from(&(a.row(i) * cap));
            }
            k += b.tr_mul(&b);
        }
        let k_in = symmetrize(&k);
        let scale = k_in.diagonal().amax().max(1.0);
        let mut reg = 0.0;
        let mut chol = None;
        for _ in 0..8 {
            if let Some(c) = Cholesky::new(&k_in + DMatrix::identity(n, n) * reg) {
                chol = Some(c);
                break;
            }
            reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        }
        let chol = chol?;
        let mut act = DMatrix::zeros(active.len(), n);
        let mut act_d = DVector::zeros(active.len());
        for (r, &i) in active.iter().enumerate() {
            act.row_mut(r).copy_from(&a.row(i));
            act_d[r] = 1.0 / (scaling.w[i] * scaling.w[i]) - threshold;
        }
        let (k_inv_act_t, schur) = if active.is_empty() {
            (DMatrix::zeros(n, 0), None)
        } else {
            let kat = chol.solve(&act.transpose());
            let mut s = &act * &kat;
            for r in 0..active.len() {
                s[(r, r)] += 1.0 / act_d[r];
            }
            let s = symmetrize(&s);
            let sscale = s.diagonal().amax().max(f64::MIN_POSITIVE);
            let mut sreg = 0.0;
            let mut f = None;
            for _ in 0..8 {
                if let Some(c) = Cholesky::new(&s + DMatrix::identity(s.nrows(), s.nrows()) * sreg) {
                    f = Some(c);
                    break;
                }
                sreg = if sreg == 0.0 { 1e-15 * sscale } else { sreg * 100.0 };
            }
            (kat, Some(f?))
        };
        Some(Newton { cone, a, scaling, k_in, chol, act, act_d, k_inv_act_t, schur })
    }

    /// `K v` for the full normal matrix.
    fn apply_k(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.k_in * v;
        if self.act.nrows() > 0 {
            let t = (&self.act * v).component_mul(&self.act_d);
            out += self.act.tr_mul(&t);
        }
        out
    }

    /// `K⁻¹ r` by the Woodbury identity over the active rows.
    fn apply_k_inv(&self, r: &DVector<f64>) -> DVector<f64> {
        let y = self.chol.solve(r);
        match &self.schur {
            None => y,
            Some(f) => {
                let t = f.solve(&(&self.act * &y));
                y - &self.k_inv_act_t * t
            }
        }
    }

    fn solve_once(&self, bx: &DVector<f64>, bz: &DVector<f64>, bs: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let sc = self.scaling;
        let c = sc.lambda_div(self.cone, bs);
        let q = bz - sc.apply_t(self.cone, &c);
        // Gᵀ D q with G = −Â.
        let rhs = bx - self.a.tr_mul(&sc.apply_inv_sq(self.cone, &q));
        let mut dx = self.apply_k_inv(&rhs);
        let res = &rhs - self.apply_k(&dx);
        dx += self.apply_k_inv(&res);
        let gdx = -(self.a * &dx);
        let dz = sc.apply_inv_sq(self.cone, &(&gdx - q));
        let ds = bz - &gdx;
        (dx, dz, ds)
    }

    /// Solves `H dx + Gᵀdz = bx`, `G dx + ds = bz`, `λ ∘ (W dz + W⁻ᵀ ds) = bs`
    /// with iterative refinement on the unreduced system.
    fn solve(&self, h: &DMatrix<f64>, bx: &DVector<f64>, bz: &DVector<f64>, bs: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let sc = self.scaling;
        let residual = |dx: &DVector<f64>, dz: &DVector<f64>, ds: &DVector<f64>| {
            let r1 = bx - h * dx + self.a.tr_mul(dz);
            let r2 = bz + self.a * dx - ds;
            let r3 = bs - self.cone.jordan(&sc.lambda, &(sc.apply(self.cone, dz) + sc.apply_inv_t(self.cone, ds)));
            let size = inf_norm(&r1).max(inf_norm(&r2)).max(inf_norm(&r3));
            (r1, r2, r3, size)
        };
        let (mut dx, mut dz, mut ds) = self.solve_once(bx, bz, bs);
        let (mut r1, mut r2, mut r3, mut size) = residual(&dx, &dz, &ds);
        // Refinement stops as soon as a correction fails to help, which
        // happens when the factorization has lost accuracy.
        for _ in 0..3 {
            let (ex, ez, es) = self.solve_once(&r1, &r2, &r3);
            let (nx, nz, ns) = (&dx + ex, &dz + ez, &ds + es);
            let next = residual(&nx, &nz, &ns);
            if !(next.3 < size) {
                break;
            }
            (dx, dz, ds) = (nx, nz, ns);
            (r1, r2, r3, size) = next;
        }
        (dx, dz, ds)
    }
}

pub(super) fn solve(problem: &ConeProgram, scaled: &Scaled, cfg: &SolverConfig) -> Result<Solution> {
    let n = problem.n_vars;
    let a = &scaled.a;
    let m = a.nrows();
    let hq = symmetrize(&problem.objective_quadratic);
    let g = &problem.objective_linear;
    let cone = Cone::new(scaled);

    let mut h = DVector::zeros(m);
    for i in 0..scaled.n_lin {
        h[i] = -scaled.lower[i];
    }
    for b in &scaled.blocks {
        for (k, o) in b.offset_svec.iter().enumerate() {
            h[b.start + k] = *o;
        }
    }

    // Starting point from the W = I Newton system, shifted into the cone.
    let k0 = symmetrize(&(&hq + a.tr_mul(a)));
    let scale0 = k0.diagonal().amax().max(1.0);
    let mut x = Cholesky::new(&k0 + DMatrix::identity(n, n) * (1e-10 * scale0))
        .map(|c| c.solve(&(-g - a.tr_mul(&h))))
        .unwrap_or_else(|| DVector::zeros(n));
    let mut s = &h + a * &x;
    let mut z = -&s;
    for v in [&mut s, &mut z] {
        let t = -cone.min_eig(v);
        if m > 0 && t >= -1e-8 * v.norm().max(1.0) {
            cone.add_identity(v, 1.0 + t);
        }
    }

    if m == 0 {
        let it = evaluate(problem, scaled, &hq, &x, &z, cfg);
        let status = if accept(&it, cfg) { SolveStatus::Optimal } else { SolveStatus::MaxIters };
        return Ok(finish(problem, it, status, 1));
    }

    let e = cone.identity(m);
    let nu = cone.degree().max(1.0);
    let max_iters = cfg.max_iters.min(MAX_ITERS);
    let mut last: Option<Iterate> = None;

    for k in 1..=max_iters {
        let hx = &hq * &x;
        let rx = &hx + g - a.tr_mul(&z);
        let rz = &s - &h - a * &x;
        let gap = s.dot(&z);
        let mu = gap / nu;

        let pres = inf_norm(&rz);
        let d_scale = 1.0 + inf_norm(&hx).max(inf_norm(g));
        let dres = inf_norm(&rx) / d_scale;
        if pres <= cfg.primal_tol && dres <= cfg.dual_tol {
            let it = evaluate(problem, scaled, &hq, &x, &(-&z), cfg);
            if accept(&it, cfg) {
                return Ok(finish(problem, it, SolveStatus::Optimal, k));
            }
            if last.as_ref().map_or(true, |prev| merit(&it, cfg) < merit(prev, cfg)) {
                last = Some(it);
            }
        }
        // Primal infeasibility: z ∈ K with Gᵀz ≈ 0 and hᵀz < 0.
        let zn = z.amax();
        if m > 0 && zn > 0.0 {
            let hz = h.dot(&z) / zn;
            if hz < -1e-7 && inf_norm(&a.tr_mul(&z)) / zn <= 1e-9 && pres > cfg.primal_tol {
                let it = evaluate(problem, scaled, &hq, &x, &(-&z), cfg);
                return Ok(finish(problem, it, SolveStatus::Infeasible, k));
            }
        }

        let Some(scaling) = Scaling::new(&cone, &s, &z) else { break };
        let Some(newton) = Newton::new(&cone, a, &hq, &scaling) else { break };
        let lam_sq = cone.jordan(&scaling.lambda, &scaling.lambda);

        let bx = -&rx;
        let bz = -&rz;
        let (_, dza, dsa) = newton.solve(&hq, &bx, &bz, &(-&lam_sq));
        let alpha_aff = cone.max_step(&s, &dsa).min(cone.max_step(&z, &dza));
        let gap_aff = (&s + &dsa * alpha_aff).dot(&(&z + &dza * alpha_aff));
        let sigma = if gap > 0.0 { (gap_aff / gap).clamp(0.0, 1.0).powi(3) } else { 0.0 };

        let ws = scaling.apply_inv_t(&cone, &dsa);
        let wz = scaling.apply(&cone, &dza);
        let bs = -&lam_sq - cone.jordan(&ws, &wz) + &e * (sigma * mu);
        let (dx, dz, ds) = newton.solve(&hq, &bx, &bz, &bs);
        let step = (STEP_FRACTION * cone.max_step(&s, &ds).min(cone.max_step(&z, &dz))).min(1.0);
        if !(step > 1e-12) {
            break;
        }
        x += &dx * step;
        s += &ds * step;
        z += &dz * step;
    }

    let it = evaluate(problem, scaled, &hq, &x, &(-&z), cfg);
    let it = match last {
        Some(prev) if merit(&prev, cfg) < merit(&it, cfg) => prev,
        _ => it,
    };
    let status = if accept(&it, cfg) { SolveStatus::Optimal } else { SolveStatus::MaxIters };
    Ok(finish(problem, it, status, max_iters))
}

/// Worst residual relative to its tolerance.
fn merit(it: &Iterate, cfg: &SolverConfig) -> f64 {
    (it.residuals.primal / cfg.primal_tol)
        .max(it.residuals.dual / cfg.dual_tol)
        .max(it.residuals.cone / cfg.cone_tol)
}
