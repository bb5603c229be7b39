mod common;

use common::scalar_spec;
use dissipakit::sampling::{build_dataset, flatten_training, Dataset};
use dissipakit::solver::SolverConfig;
use dissipakit::verify::{
    error_budget, generalization_bound, summarize, sweep_lambda, verify, verify_dataset, write_sweep,
    write_verification, SweepResult, VerificationReport, SWEEP_CSV_HEADER, VERIFY_CSV_HEADER,
};
use dissipakit::{Certificate, LearnConfig, Mode};
use proptest::prelude::*;

fn scalar_data() -> Dataset {
    let mut spec = scalar_spec(0.5, 0.5, 1.0, 8, 30, 4);
    spec.test_fraction = 0.25;
    build_dataset(&spec).unwrap()
}

fn learned(ds: &Dataset, mode: Mode) -> Certificate {
    LearnConfig { mode, ..Default::default() }.learn(ds, &SolverConfig::default()).unwrap()
}

#[test]
fn normalized_margins_are_scale_invariant() {
    let ds = scalar_data();
    for mode in [Mode::Parametric, Mode::Rkhs] {
        let cert = learned(&ds, mode);
        let base = verify_dataset(&cert, &ds).unwrap();
        for c in [1e-3, 0.7, 42.0] {
            let r = verify_dataset(&cert.scaled(c), &ds).unwrap();
            for (a, b) in base.per_sample_margins.iter().zip(&r.per_sample_margins) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{mode} c={c}: {a} vs {b}");
            }
            assert!((r.rho_train_normalized - base.rho_train_normalized).abs() <= 1e-12);
            assert_eq!(r.violation_rate, base.violation_rate);
        }
    }
}

#[test]
fn report_recounts_from_margins() {
    let ds = scalar_data();
    let cert = learned(&ds, Mode::Parametric);
    let test = ds.test_samples();
    let r = verify(&cert, &test).unwrap();
    assert_eq!(r.raw_margins.len(), test.len());
    let (nq, np) = cert.norms().unwrap();
    assert!((r.normalizer - (nq + np)).abs() <= 1e-15 * r.normalizer);
    let mut negatives = 0;
    for (s, (raw, norm)) in test.iter().zip(r.raw_margins.iter().zip(&r.per_sample_margins)) {
        assert_eq!(*raw, cert.margin(s));
        assert_eq!(*norm, raw / r.normalizer);
        negatives += (*norm < 0.0) as usize;
    }
    assert_eq!(r.violation_rate, negatives as f64 / test.len() as f64);
    let n = test.len() as f64;
    let mean: f64 = r.per_sample_margins.iter().sum::<f64>() / n;
    let var = r.per_sample_margins.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    assert!((r.mean - mean).abs() <= 1e-15 * (1.0 + mean.abs()));
    assert!((r.std - var.sqrt()).abs() <= 1e-12 * (1.0 + var.sqrt()));
    assert!(r.passes(r.violation_rate) && (r.violation_rate == 0.0 || !r.passes(0.0)));
}

#[test]
fn reports_roundtrip_through_files() {
    let ds = scalar_data();
    let cert = learned(&ds, Mode::Parametric);
    let r = verify_dataset(&cert, &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (csv, json) = (dir.path().join("v.csv"), dir.path().join("v.json"));
    write_verification(&r, &csv, &json).unwrap();
    let back: VerificationReport = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(back, r);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(VERIFY_CSV_HEADER));
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0].parse::<usize>().unwrap(), i);
        assert_eq!(cells[1].parse::<f64>().unwrap(), r.raw_margins[i]);
        assert_eq!(cells[2].parse::<f64>().unwrap(), r.per_sample_margins[i]);
    }
}

#[test]
fn empty_or_mismatched_samples_are_rejected() {
    let ds = scalar_data();
    let cert = learned(&ds, Mode::Parametric);
    assert!(verify(&cert, &[]).is_err());
    let mut bad = ds.test_samples();
    bad[0].x.push(0.0);
    assert!(verify(&cert, &bad).is_err());
}

#[test]
fn sweep_is_monotone_in_lambda() {
    let ds = scalar_data();
    let grid = [0.01, 0.1, 1.0, 10.0];
    for mode in [Mode::Parametric, Mode::Rkhs] {
        let s = sweep_lambda(&ds, &LearnConfig { mode, ..Default::default() }, &grid, &SolverConfig::default()).unwrap();
        assert_eq!(s.n_succeeded(), 4, "{mode}: {:?}", s.failures);
        assert!(s.objectives_nondecreasing(1e-6), "{mode}: {:?}", s.objectives);
        assert!(s.alphas_nonincreasing(1e-6), "{mode}: {:?}", s.alphas);
        let dir = tempfile::tempdir().unwrap();
        let (csv, json) = (dir.path().join("s.csv"), dir.path().join("s.json"));
        write_sweep(&s, &csv, &json).unwrap();
        let back: SweepResult = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(back, s);
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().next(), Some(SWEEP_CSV_HEADER));
        assert_eq!(text.lines().count(), 5);
    }
}

#[test]
fn sweep_rejects_bad_grids() {
    let ds = scalar_data();
    let cfg = SolverConfig::default();
    for grid in [vec![1.0], vec![1.0, 0.5], vec![0.0, 1.0], vec![1.0, f64::NAN]] {
        assert!(sweep_lambda(&ds, &LearnConfig::default(), &grid, &cfg).is_err(), "{grid:?}");
    }
}

#[test]
fn sweep_records_failed_learns() {
    let ds = scalar_data();
    let cfg = SolverConfig { max_iters: 1, ..Default::default() };
    let s = sweep_lambda(&ds, &LearnConfig::default(), &[0.1, 1.0], &cfg).unwrap();
    assert_eq!(s.n_succeeded(), 0);
    assert_eq!(s.failures.len(), 2);
    assert!(s.to_csv().lines().nth(1).unwrap().ends_with(",,,,,"));
}

#[test]
fn generalization_bound_hand_value() {
    // (1/1000)(ln 20 + √0.1·ln 1000 + 100·ln 10), evaluated separately.
    let r = generalization_bound(1000, 0.05, 0.1, 1.0).unwrap();
    assert!((r.raw_bound - 0.235_438_665_593_022_1).abs() <= 1e-12, "{}", r.raw_bound);
    assert_eq!(r.bound, r.raw_bound);
    let big = generalization_bound(10, 0.05, 0.1, 1.0).unwrap();
    assert!(big.raw_bound > 1.0 && big.bound == 1.0);
    assert!(generalization_bound(5, 1.0, 0.5, 2.0).is_ok());
    for (m, d, e, c) in [(0, 0.5, 0.1, 1.0), (5, 0.0, 0.1, 1.0), (5, 1.5, 0.1, 1.0), (5, 0.5, 0.0, 1.0), (5, 0.5, 0.1, -1.0)] {
        assert!(generalization_bound(m, d, e, c).is_err());
    }
}

#[test]
fn error_budget_matches_formula() {
    let b = error_budget(0.1, 0.2, 0.05, 0.3).unwrap();
    assert!((b.total - 0.55).abs() <= 1e-15);
    assert_eq!(error_budget(0.1, 0.2, 0.5, 0.3).unwrap().total, 0.1 + 0.2);
    assert!(error_budget(-0.1, 0.0, 0.0, 0.0).is_err());
    assert!(error_budget(0.0, 0.0, 0.0, f64::NAN).is_err());
}

proptest! {
    #[test]
    fn bound_scales_as_one_over_m(m in 1usize..10_000, delta in 0.01f64..1.0, eps in 0.01f64..1.0, c in 0.1f64..10.0) {
        let a = generalization_bound(m, delta, eps, c).unwrap();
        let b = generalization_bound(10 * m, delta, eps, c).unwrap();
        // m·raw(m) is affine in ln m with slope C·√ε.
        let gap = (10 * m) as f64 * b.raw_bound - m as f64 * a.raw_bound;
        let want = c * eps.sqrt() * 10f64.ln();
        prop_assert!((gap - want).abs() <= 1e-9 * (1.0 + m as f64 * a.raw_bound));
        prop_assert!((0.0..=1.0).contains(&a.bound));
    }

    #[test]
    fn summary_counts_negatives(values in proptest::collection::vec(-5.0f64..5.0, 1..50)) {
        let (mean, std, viol) = summarize(&values);
        let n = values.len() as f64;
        prop_assert!((mean - values.iter().sum::<f64>() / n).abs() <= 1e-12);
        prop_assert!(std >= 0.0);
        prop_assert_eq!(viol, values.iter().filter(|v| **v < 0.0).count() as f64 / n);
    }
}

#[test]
fn training_margins_clear_rho() {
    let ds = scalar_data();
    let cert = learned(&ds, Mode::Parametric);
    let r = verify(&cert, &flatten_training(&ds)).unwrap();
    assert!(r.raw_margins.iter().all(|m| *m >= cert.rho() - 1e-6));
}
