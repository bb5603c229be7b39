//! Independent oracles shared by the integration tests. Nothing in this
//! file calls into the library's numerics.
#![allow(dead_code)]

pub mod gen;

use dissipakit::dynamics::{DistillationParams, LinearSystem, ModelSpec};
use dissipakit::sampling::{DatasetSpec, ExcitationSpec, Sample};
use dissipakit::solver::ConeProgram;

pub type Mat = Vec<Vec<f64>>;

pub fn mat_from(m: &nalgebra::DMatrix<f64>) -> Mat {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and the eigenvectors as columns of `v`.
pub fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.len();
    let mut a = a.clone();
    let mut v: Mat = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>() + off;
        if off <= 1e-32 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Frobenius-nearest PSD matrix via [`jacobi_eigen`].
pub fn psd_project_oracle(a: &Mat) -> Mat {
    let n = a.len();
    let (w, v) = jacobi_eigen(a);
    let mut out = vec![vec![0.0; n]; n];
    for (k, &l) in w.iter().enumerate() {
        if l > 0.0 {
            for i in 0..n {
                for j in 0..n {
                    out[i][j] += l * v[i][k] * v[j][k];
                }
            }
        }
    }
    out
}

pub fn min_eig_oracle(a: &Mat) -> f64 {
    jacobi_eigen(a).0.into_iter().fold(f64::INFINITY, f64::min)
}

pub fn max_eig_oracle(a: &Mat) -> f64 {
    jacobi_eigen(a).0.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Singular values of a symmetric matrix, descending: the absolute
/// eigenvalues.
pub fn sym_singular_values(m: &Mat) -> Vec<f64> {
    let mut s: Vec<f64> = jacobi_eigen(m).0.into_iter().map(f64::abs).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Plain-array copy of a program, evaluated without the library.
pub struct PlainProgram {
    pub n: usize,
    pub h: Mat,
    pub g: Vec<f64>,
    pub a: Mat,
    pub b: Vec<f64>,
    /// Each block: offset and `(row, col, var, coeff)` terms.
    pub blocks: Vec<(Mat, Vec<(usize, usize, usize, f64)>)>,
}

impl PlainProgram {
    pub fn from_program(p: &ConeProgram) -> Self {
        PlainProgram {
            n: p.n_vars,
            h: mat_from(&p.objective_quadratic),
            g: p.objective_linear.iter().copied().collect(),
            a: mat_from(&p.ineq_matrix),
            b: p.ineq_rhs.iter().copied().collect(),
            blocks: p
                .psd_blocks
                .iter()
                .map(|blk| (mat_from(&blk.offset), blk.terms.iter().map(|t| (t.row, t.col, t.var, t.coeff)).collect()))
                .collect(),
        }
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        let mut f = 0.0;
        for i in 0..self.n {
            f += self.g[i] * v[i];
            for j in 0..self.n {
                f += 0.5 * v[i] * self.h[i][j] * v[j];
            }
        }
        f
    }

    pub fn block_at(&self, k: usize, v: &[f64]) -> Mat {
        let (offset, terms) = &self.blocks[k];
        let mut m = offset.clone();
        for &(r, c, var, coeff) in terms {
            m[r][c] += coeff * v[var];
            if r != c {
                m[c][r] += coeff * v[var];
            }
        }
        m
    }

    /// Smallest slack over rows and block eigenvalues (2×2 blocks in closed
    /// form, larger ones through [`jacobi_eigen`]).
    pub fn min_slack(&self, v: &[f64]) -> f64 {
        let mut s = f64::INFINITY;
        for (row, b) in self.a.iter().zip(&self.b) {
            s = s.min(row.iter().zip(v).map(|(x, y)| x * y).sum::<f64>() - b);
        }
        for k in 0..self.blocks.len() {
            let m = self.block_at(k, v);
            let e = if m.len() == 2 {
                let tr = 0.5 * (m[0][0] + m[1][1]);
                let d = (0.25 * (m[0][0] - m[1][1]).powi(2) + m[0][1] * m[0][1]).sqrt();
                tr - d
            } else {
                min_eig_oracle(&m)
            };
            s = s.min(e);
        }
        s
    }
}

/// Coarse-to-fine grid search for `min f` over the feasible set inside the
/// box `center ± half_width`. Each level lays a 25-point grid per axis and
/// recenters on the best feasible point at 0.8 of the width, down to a
/// spacing below `1e-8 · max(1, width)`. The grid closes in slowly on
/// optima at kinks of the feasible set, so its best point is refined by
/// [`barrier_refine`].
pub fn brute_force(p: &PlainProgram, center: &[f64], half_width: f64, start: &[f64]) -> (f64, Vec<f64>) {
    let n = p.n;
    let pts = 25usize;
    let mut best_v = start.to_vec();
    assert!(p.min_slack(&best_v) >= 0.0, "start point must be feasible");
    let mut best_f = p.objective(&best_v);
    let mut c = center.to_vec();
    let mut w = half_width;
    let floor = 1e-8 * half_width.max(1.0);
    let mut v = vec![0.0; n];
    loop {
        let h = 2.0 * w / (pts - 1) as f64;
        let total = pts.pow(n as u32);
        for idx in 0..total {
            let mut r = idx;
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = c[i] - w + h * (r % pts) as f64;
                r /= pts;
            }
            let f = p.objective(&v);
            if f < best_f && p.min_slack(&v) >= 0.0 {
                best_f = f;
                best_v.copy_from_slice(&v);
            }
        }
        if h < floor {
            break;
        }
        c.copy_from_slice(&best_v);
        w *= 0.8;
    }
    // Interior seed between the strictly feasible start and the grid optimum.
    let seed: Vec<f64> = best_v.iter().zip(start).map(|(b, s)| b + 1e-3 * (s - b)).collect();
    if let Some(v) = barrier_refine(p, &seed) {
        let f = p.objective(&v);
        if f < best_f && p.min_slack(&v) >= 0.0 {
            return (f, v);
        }
    }
    (best_f, best_v)
}

/// Explicit feature map of `(aᵀb + c)²`: squares, scaled cross terms,
/// scaled linear terms and a constant.
pub fn poly2_features(x: &[f64], offset: f64) -> Vec<f64> {
    let n = x.len();
    let mut f = Vec::new();
    for i in 0..n {
        f.push(x[i] * x[i]);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            f.push(std::f64::consts::SQRT_2 * x[i] * x[j]);
        }
    }
    for &xi in x {
        f.push((2.0 * offset).sqrt() * xi);
    }
    f.push(offset);
    f
}

/// `Σ_ij c_ij f_i f_jᵀ`, the operator `F c Fᵀ` in feature coordinates.
pub fn feature_operator(coeffs: &Mat, feats: &[Vec<f64>]) -> Mat {
    let d = feats[0].len();
    let mut op = vec![vec![0.0; d]; d];
    for (i, fi) in feats.iter().enumerate() {
        for (j, fj) in feats.iter().enumerate() {
            let c = coeffs[i][j];
            if c == 0.0 {
                continue;
            }
            for a in 0..d {
                for b in 0..d {
                    op[a][b] += c * fi[a] * fj[b];
                }
            }
        }
    }
    op
}

pub fn frobenius(m: &Mat) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn quad(op: &Mat, f: &[f64]) -> f64 {
    let d = f.len();
    (0..d).map(|a| (0..d).map(|b| f[a] * op[a][b] * f[b]).sum::<f64>()).sum()
}

/// Column right-hand side written out from the model equations.
pub fn column_rhs(x: &[f64; 4], u: f64, p: &DistillationParams) -> [f64; 4] {
    let e = |x: f64| p.beta * x / (1.0 + (p.beta - 1.0) * x);
    let uf = u.clamp(-0.5, 0.5);
    let (v, l, f, zf) = (p.v, p.l, p.f, p.z_f);
    let [h1, h2, h3, h4] = p.h;
    [
        (v * e(x[1]) - v * x[0]) / h1,
        (l * (x[0] - x[1]) + v * (e(x[2]) - e(x[1]))) / h2,
        (-f * x[2] + l * (x[1] - x[2]) + v * e(x[3]) - v * e(x[2]) + f * zf * (1.0 + uf)) / h3,
        ((f + l) * (x[2] - x[3]) + v * (x[3] - e(x[3]))) / h4,
    ]
}

/// Newton iteration with the analytic Jacobian of [`column_rhs`].
pub fn column_equilibrium_oracle(p: &DistillationParams, u: f64) -> [f64; 4] {
    let de = |x: f64| p.beta / (1.0 + (p.beta - 1.0) * x).powi(2);
    let (v, l, f) = (p.v, p.l, p.f);
    let [h1, h2, h3, h4] = p.h;
    let mut x = [0.5; 4];
    for _ in 0..50 {
        let r = column_rhs(&x, u, p);
        let j = nalgebra::Matrix4::new(
            -v / h1,
            v * de(x[1]) / h1,
            0.0,
            0.0,
            l / h2,
            (-l - v * de(x[1])) / h2,
            v * de(x[2]) / h2,
            0.0,
            0.0,
            l / h3,
            (-f - l - v * de(x[2])) / h3,
            v * de(x[3]) / h3,
            0.0,
            0.0,
            (f + l) / h4,
            (-(f + l) + v - v * de(x[3])) / h4,
        );
        let dx = j.lu().solve(&nalgebra::Vector4::from(r)).expect("nonsingular Jacobian");
        for i in 0..4 {
            x[i] -= dx[i];
        }
    }
    x
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Linear scalar dataset `x⁺ = a x + b u`, `y = x`.
pub fn scalar_spec(a: f64, b: f64, sigma_u: f64, m: usize, horizon: usize, seed: u64) -> DatasetSpec {
    DatasetSpec {
        model: ModelSpec::linear(&LinearSystem::scalar(a, b, 1.0)),
        excitation: ExcitationSpec { sigma_u, hold_steps: 1, horizon, seed: 0 },
        m,
        test_fraction: 0.0,
        seed,
        ..Default::default()
    }
}

/// Random transition with the given dimensions.
pub fn random_sample(rng: &mut impl rand::Rng, n_x: usize, n_y: usize, n_u: usize) -> Sample {
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-2.0..2.0)).collect() };
    let x = draw(n_x);
    let x_next = draw(n_x);
    let y = draw(n_y);
    let u = draw(n_u);
    Sample { traj: 0, t: 0, z: [y.clone(), u.clone()].concat(), x, x_next, y, u }
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(m: &Mat) -> Option<Mat> {
    let n = m.len();
    let mut a: Mat = m.iter().cloned().collect();
    let mut inv: Mat = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for j in 0..n {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[i][col];
                for j in 0..n {
                    a[i][j] -= f * a[col][j];
                    inv[i][j] -= f * inv[col][j];
                }
            }
        }
    }
    Some(inv)
}

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    (0..n).map(|i| (0..b[0].len()).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

fn trace(a: &Mat) -> f64 {
    (0..a.len()).map(|i| a[i][i]).sum()
}

/// Log-barrier path following for `p` from a strictly feasible `start`:
/// damped Newton on `t·f − Σ log slack − Σ log det M` while `t` grows
/// until the barrier gap is below 1e-11.
pub fn barrier_refine(p: &PlainProgram, start: &[f64]) -> Option<Vec<f64>> {
    let n = p.n;
    let rows = p.a.len();
    let strict = |v: &[f64]| -> bool {
        (0..rows).all(|i| p.a[i].iter().zip(v).map(|(x, y)| x * y).sum::<f64>() - p.b[i] > 0.0)
            && (0..p.blocks.len()).all(|k| min_eig_oracle(&p.block_at(k, v)) > 0.0)
    };
    if !strict(start) {
        return None;
    }
    // Coefficient matrix of each variable in each block.
    let coeffs: Vec<Vec<Mat>> = p
        .blocks
        .iter()
        .map(|(offset, terms)| {
            let d = offset.len();
            let mut per_var = vec![vec![vec![0.0; d]; d]; n];
            for &(r, c, var, coeff) in terms {
                per_var[var][r][c] += coeff;
                if r != c {
                    per_var[var][c][r] += coeff;
                }
            }
            per_var
        })
        .collect();
    let dims: usize = rows + p.blocks.iter().map(|b| b.0.len()).sum::<usize>();
    let phi = |v: &[f64], t: f64| -> f64 {
        let mut f = t * p.objective(v);
        for i in 0..rows {
            f -= (p.a[i].iter().zip(v).map(|(x, y)| x * y).sum::<f64>() - p.b[i]).ln();
        }
        for k in 0..p.blocks.len() {
            let eigs = jacobi_eigen(&p.block_at(k, v)).0;
            f -= eigs.iter().map(|e| e.ln()).sum::<f64>();
        }
        f
    };
    let mut v = start.to_vec();
    let mut t = 1.0;
    while (dims as f64) / t > 1e-11 {
        for _ in 0..200 {
            let mut grad: Vec<f64> = (0..n).map(|i| t * (p.g[i] + (0..n).map(|j| p.h[i][j] * v[j]).sum::<f64>())).collect();
            let mut hess: Mat = (0..n).map(|i| (0..n).map(|j| t * p.h[i][j]).collect()).collect();
            for i in 0..rows {
                let s = p.a[i].iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() - p.b[i];
                for a in 0..n {
                    grad[a] -= p.a[i][a] / s;
                    for b in 0..n {
                        hess[a][b] += p.a[i][a] * p.a[i][b] / (s * s);
                    }
                }
            }
            for (k, per_var) in coeffs.iter().enumerate() {
                let minv = inverse(&p.block_at(k, &v))?;
                let prods: Vec<Mat> = per_var.iter().map(|ak| mat_mul(&minv, ak)).collect();
                for a in 0..n {
                    grad[a] -= trace(&prods[a]);
                    for b in 0..n {
                        hess[a][b] += trace(&mat_mul(&prods[a], &prods[b]));
                    }
                }
            }
            let hinv = inverse(&hess)?;
            let step: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| hinv[i][j] * grad[j]).sum::<f64>()).collect();
            let decrement: f64 = -grad.iter().zip(&step).map(|(g, s)| g * s).sum::<f64>();
            if decrement / 2.0 < 1e-14 {
                break;
            }
            let f0 = phi(&v, t);
            let mut alpha = 1.0;
            loop {
                let trial: Vec<f64> = v.iter().zip(&step).map(|(x, s)| x + alpha * s).collect();
                if strict(&trial) && phi(&trial, t) <= f0 - 0.25 * alpha * decrement {
                    v = trial;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-12 {
                    return Some(v);
                }
            }
        }
        t *= 8.0;
    }
    Some(v)
}
