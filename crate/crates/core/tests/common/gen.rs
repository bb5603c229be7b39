//! Random inputs and comparison harnesses shared by the solver, RKHS and
//! acceptance tests.

use dissipakit::kernels::KernelSpec;
use dissipakit::nonparametric::{assemble_grams_with, gram_form_margins, hs_norm, KernelSet, StateAnchors};
use dissipakit::sampling::Sample;
use dissipakit::solver::{ConeProgram, PsdBlock};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{feature_operator, frobenius, mat_from, poly2_features, quad};

pub const POLY_OFFSET: f64 = 1.0;

pub fn poly2() -> KernelSet {
    KernelSet::uniform(KernelSpec::Polynomial { degree: 2, offset: POLY_OFFSET })
}

/// Strictly convex program in `n` variables with up to three rows and, when
/// `with_block`, a 2×2 PSD block. All constraints hold strictly at a
/// random point, which is returned.
pub fn random_program(rng: &mut ChaCha8Rng, n: usize, with_block: bool) -> (ConeProgram, Vec<f64>) {
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.2;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let v0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rows = rng.random_range(0..=3);
    let a = DMatrix::from_fn(rows, n, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(rows, |i, _| {
        let av: f64 = (0..n).map(|j| a[(i, j)] * v0[j]).sum();
        av - rng.random_range(0.05..0.5)
    });
    let mut p = ConeProgram::new(h, g).with_inequalities(a, b);
    if with_block {
        let mut blk = PsdBlock::new(2);
        for &(r, c) in &[(0, 0), (0, 1), (1, 1)] {
            let var = rng.random_range(0..n);
            blk.push(r, c, var, rng.random_range(-1.0..1.0));
        }
        let at_v0 = blk.evaluate(&v0);
        let s = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.5..0.5));
        blk.offset = -at_v0 + &s * s.transpose() + DMatrix::identity(2, 2) * 0.05;
        p = p.with_block(blk);
    }
    (p, v0)
}

/// Box around the unconstrained minimizer that contains the sublevel set
/// of the feasible point `v0`.
pub fn search_box(p: &ConeProgram, v0: &[f64]) -> (Vec<f64>, f64) {
    let h = &p.objective_quadratic;
    let center = h.clone().cholesky().unwrap().solve(&(-&p.objective_linear));
    let c: Vec<f64> = center.iter().copied().collect();
    let mu = h.symmetric_eigenvalues().min();
    let gap = p.objective(v0) - p.objective(&c);
    (c, (2.0 * gap.max(0.0) / mu).sqrt() * 1.01 + 1e-6)
}

/// One trajectory of `len` transitions with independent random entries.
pub fn random_trajectory(rng: &mut ChaCha8Rng, len: usize, n_x: usize, n_y: usize, n_u: usize) -> Vec<Sample> {
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let xs: Vec<Vec<f64>> = (0..=len).map(|_| draw(n_x)).collect();
    (0..len)
        .map(|t| {
            let (y, u) = (draw(n_y), draw(n_u));
            Sample { traj: 0, t, z: [y.clone(), u.clone()].concat(), x: xs[t].clone(), x_next: xs[t + 1].clone(), y, u }
        })
        .collect()
}

pub fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&m + m.transpose()) * 0.5
}

pub fn poly2_feats(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points.iter().map(|p| poly2_features(p, POLY_OFFSET)).collect()
}

/// Largest gap between the library's trace-formula norms and Gram-form
/// margins and the same quantities built from explicit degree-2 features,
/// for random coefficient matrices.
pub fn gram_feature_gap(samples: &[Sample], anchors: StateAnchors, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grams = assemble_grams_with(samples, &poly2(), anchors).unwrap();
    let pi = random_sym(&mut rng, grams.len());
    let p = random_sym(&mut rng, grams.n_state_anchors());

    let op_pi = feature_operator(&mat_from(&pi), &poly2_feats(&grams.phi.anchors));
    let op_p = feature_operator(&mat_from(&p), &poly2_feats(&grams.psi.anchors));
    let mut gap = (hs_norm(&pi, &grams.phi.entries) - frobenius(&op_pi)).abs();
    gap = gap.max((hs_norm(&p, &grams.psi.entries) - frobenius(&op_p)).abs());

    let gram_form = gram_form_margins(&grams, &pi, &p);
    for (t, s) in samples.iter().enumerate() {
        let direct = quad(&op_pi, &poly2_features(&s.z, POLY_OFFSET)) + quad(&op_p, &poly2_features(&s.x, POLY_OFFSET))
            - quad(&op_p, &poly2_features(&s.x_next, POLY_OFFSET));
        gap = gap.max((gram_form[t] - direct).abs());
    }
    gap
}
