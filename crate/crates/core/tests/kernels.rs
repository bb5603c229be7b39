mod common;

use common::{min_eig_oracle, poly2_features};
use dissipakit::kernels::{eval_kernel, fit_norm_coefficients, gram, median_pairwise_distance, KernelSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn points(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, dim), n)
}

fn cloud() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..12, 1usize..5).prop_flat_map(|(n, d)| points(n, d))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #[test]
    fn polynomial_kernel_is_feature_inner_product(a in points(1, 4), b in points(1, 4), c in 0.0f64..3.0) {
        let k = KernelSpec::Polynomial { degree: 2, offset: c };
        let direct = eval_kernel(&k, &a[0], &b[0]).unwrap();
        let feats = dot(&poly2_features(&a[0], c), &poly2_features(&b[0], c));
        prop_assert!((direct - feats).abs() <= 1e-10 * (1.0 + direct.abs()));
    }

    #[test]
    fn gaussian_kernel_matches_formula(a in points(1, 3), b in points(1, 3), bw in 0.1f64..5.0) {
        let k = KernelSpec::Gaussian { bandwidth: bw };
        let d2: f64 = a[0].iter().zip(&b[0]).map(|(x, y)| (x - y).powi(2)).sum();
        let want = (-d2 / (2.0 * bw * bw)).exp();
        prop_assert!((eval_kernel(&k, &a[0], &b[0]).unwrap() - want).abs() <= 1e-15);
        prop_assert_eq!(eval_kernel(&k, &a[0], &b[0]).unwrap(), eval_kernel(&k, &b[0], &a[0]).unwrap());
    }

    #[test]
    fn grams_are_symmetric_psd(pts in cloud(), bw in 0.2f64..3.0) {
        for spec in [
            KernelSpec::Linear,
            KernelSpec::Polynomial { degree: 2, offset: 1.0 },
            KernelSpec::Gaussian { bandwidth: bw },
        ] {
            let g = gram(&spec, &pts, Some(&pts)).unwrap();
            let m = &g.entries;
            prop_assert_eq!(m, &m.transpose());
            prop_assert_eq!(m, g.eval_columns.as_ref().unwrap());
            let rows = common::mat_from(m);
            let scale = m.amax().max(1.0);
            prop_assert!(min_eig_oracle(&rows) >= -1e-10 * scale);
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    prop_assert_eq!(m[(i, j)], spec.eval(&pts[i], &pts[j]));
                }
            }
        }
    }

    #[test]
    fn interpolation_reproduces_targets(pts in points(6, 2), bw in 0.5f64..2.0) {
        let g = gram(&KernelSpec::Gaussian { bandwidth: bw }, &pts, None).unwrap();
        let targets: Vec<f64> = pts.iter().map(|p| common::norm(p)).collect();
        if let Ok(c) = fit_norm_coefficients(&g, &targets, 1e-10) {
            // Residual of the regularized system is exactly the ridge term.
            let fitted = &g.entries * nalgebra::DVector::from_column_slice(&c);
            for (t, f) in targets.iter().zip(fitted.iter()) {
                let resid = t - f;
                prop_assert!(resid.abs() <= 1e-6 * (1.0 + t.abs()), "residual {}", resid);
            }
        }
    }

    #[test]
    fn median_distance_is_a_pairwise_distance(pts in cloud()) {
        let mut d = Vec::new();
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let v: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if v > 0.0 {
                    d.push(v);
                }
            }
        }
        d.sort_by(f64::total_cmp);
        let m = median_pairwise_distance(&pts).unwrap();
        let below = d.iter().filter(|v| **v < m).count();
        let above = d.iter().filter(|v| **v > m).count();
        prop_assert!(below <= d.len() / 2 && above <= d.len() / 2);
    }
}

#[test]
fn linear_gram_is_point_product() {
    let pts = vec![vec![1.0, 2.0], vec![-0.5, 0.25], vec![3.0, -1.0]];
    let x = DMatrix::from_fn(3, 2, |i, j| pts[i][j]);
    let g = gram(&KernelSpec::Linear, &pts, None).unwrap();
    assert_eq!(g.entries, &x * x.transpose());
}

#[test]
fn coincident_points_fall_back_to_unit_bandwidth() {
    let pts = vec![vec![0.3, 0.3]; 4];
    assert_eq!(median_pairwise_distance(&pts), None);
    assert_eq!(KernelSpec::gaussian_median(&pts), KernelSpec::Gaussian { bandwidth: 1.0 });
}
