mod common;

use common::{column_equilibrium_oracle, column_rhs, norm};
use dissipakit::dynamics::{
    distillation_equilibrium, linearize, simulate, DistillationColumn, DistillationParams, IntegratorConfig,
    LinearSystem, ModelSpec, SystemModel,
};
use dissipakit::sampling::{generate_excitation, ExcitationSpec};
use dissipakit::Error;
use proptest::prelude::*;

/// Classical RK4 on [`column_rhs`], written independently of the library.
fn rk4_oracle(x: [f64; 4], u: f64, p: &DistillationParams, dt: f64, substeps: usize) -> [f64; 4] {
    let h = dt / substeps as f64;
    let add = |a: [f64; 4], k: [f64; 4], s: f64| [a[0] + s * k[0], a[1] + s * k[1], a[2] + s * k[2], a[3] + s * k[3]];
    let mut x = x;
    for _ in 0..substeps {
        let k1 = column_rhs(&x, u, p);
        let k2 = column_rhs(&add(x, k1, h / 2.0), u, p);
        let k3 = column_rhs(&add(x, k2, h / 2.0), u, p);
        let k4 = column_rhs(&add(x, k3, h), u, p);
        for i in 0..4 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

#[test]
fn equilibrium_matches_newton_oracle() {
    let p = DistillationParams::default();
    for u in [-0.5, -0.2, 0.0, 0.3, 0.5] {
        let lib = distillation_equilibrium(&p, u).unwrap();
        assert!(norm(&column_rhs(&lib, u, &p)) <= 1e-10, "u={u}");
        let oracle = column_equilibrium_oracle(&p, u);
        assert!(norm(&column_rhs(&oracle, u, &p)) <= 1e-12);
        for i in 0..4 {
            assert!((lib[i] - oracle[i]).abs() <= 1e-10, "u={u} tray {i}");
            assert!((0.0..=1.0).contains(&lib[i]));
        }
    }
    let col = DistillationColumn::new(p, IntegratorConfig::default()).unwrap();
    assert_eq!(col.equilibrium, distillation_equilibrium(&p, 0.0).unwrap());
}

#[test]
fn step_matches_independent_rk4() {
    let p = DistillationParams::default();
    let col = DistillationColumn::new(p, IntegratorConfig::default()).unwrap();
    let x = [0.9, 0.7, 0.5, 0.2];
    for u in [-0.8, 0.0, 0.25] {
        let lib = col.step_absolute(&x, u).unwrap();
        let oracle = rk4_oracle(x, u, &p, 0.1, 10);
        for i in 0..4 {
            assert!((lib[i] - oracle[i]).abs() <= 1e-14);
        }
    }
}

#[test]
fn step_doubling_agrees() {
    let p = DistillationParams::default();
    let coarse = DistillationColumn::new(p, IntegratorConfig { dt: 0.1, substeps: 10 }).unwrap();
    let fine = DistillationColumn::new(p, IntegratorConfig { dt: 0.1, substeps: 20 }).unwrap();
    let inputs = generate_excitation(&ExcitationSpec { sigma_u: 0.3, hold_steps: 20, horizon: 500, seed: 0 }, 1, 9).unwrap();
    let a = simulate(&coarse, &[0.0; 4], &inputs).unwrap();
    let b = simulate(&fine, &[0.0; 4], &inputs).unwrap();
    let worst = a
        .states
        .iter()
        .zip(&b.states)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "step-doubling gap {worst:e}");
}

#[test]
fn compositions_stay_physical_over_long_runs() {
    let p = DistillationParams::default();
    let col = DistillationColumn::new(p, IntegratorConfig::default()).unwrap();
    for (seed, sigma) in [(1, 0.2), (2, 1.0), (3, 5.0)] {
        let spec = ExcitationSpec { sigma_u: sigma, hold_steps: 20, horizon: 10_000, seed: 0 };
        let inputs = generate_excitation(&spec, 1, seed).unwrap();
        let tr = simulate(&col, &[0.0; 4], &inputs).unwrap();
        for x in &tr.states {
            for (d, e) in x.iter().zip(col.equilibrium.iter()) {
                let abs = d + e;
                assert!((0.0..=1.0).contains(&abs), "composition {abs} left [0, 1]");
            }
        }
        assert_eq!(tr.outputs[17], vec![tr.states[17][0], tr.states[17][3]]);
    }
}

#[test]
fn column_linearization_is_stable() {
    let col = DistillationColumn::new(DistillationParams::default(), IntegratorConfig::default()).unwrap();
    let lin = linearize(&col, &[0.0; 4], &[0.0], 1e-6).unwrap();
    let r = lin.spectral_radius();
    assert!(r < 1.0 && r > 0.5, "spectral radius {r}");
    assert_eq!(lin.c.shape(), (2, 4));
    assert!((lin.c[(0, 0)] - 1.0).abs() < 1e-9 && (lin.c[(1, 3)] - 1.0).abs() < 1e-9);
}

#[test]
fn scripted_spec_roundtrips_and_simulates() {
    let spec: ModelSpec = serde_json::from_str(
        r#"{"kind": "scripted", "step": ["0.5 * x1 + 0.5 * u1"], "output": ["x1"], "n_u": 1}"#,
    )
    .unwrap();
    let model = spec.build(&IntegratorConfig::default()).unwrap();
    let lin = LinearSystem::scalar(0.5, 0.5, 1.0);
    let inputs: Vec<Vec<f64>> = (0..20).map(|k| vec![(k as f64 * 0.37).sin()]).collect();
    let a = simulate(model.as_ref(), &[0.4], &inputs).unwrap();
    let b = simulate(&lin, &[0.4], &inputs).unwrap();
    for (x, y) in a.states.iter().zip(&b.states) {
        assert!((x[0] - y[0]).abs() <= 1e-15);
    }
    let text = serde_json::to_string(&spec).unwrap();
    assert_eq!(serde_json::from_str::<ModelSpec>(&text).unwrap(), spec);
}

#[test]
fn bad_scripts_are_rejected() {
    let spec = ModelSpec::Scripted { step: vec!["(x1 + ".into()], output: vec!["x1".into()], n_u: 1 };
    assert!(matches!(spec.build(&IntegratorConfig::default()), Err(Error::InvalidInput(_))));
    let blowup = ModelSpec::Scripted { step: vec!["x1 * 1e200".into()], output: vec!["x1".into()], n_u: 1 };
    let model = blowup.build(&IntegratorConfig::default()).unwrap();
    let err = simulate(model.as_ref(), &[1.0], &vec![vec![0.0]; 5]).unwrap_err();
    assert!(matches!(err, Error::SimulationDiverged { step: 1, .. }), "{err:?}");
}

proptest! {
    #[test]
    fn linear_simulation_matches_closed_form(a in -0.95f64..0.95, b in -2.0f64..2.0, x0 in -3.0f64..3.0, u in -1.0f64..1.0) {
        let sys = LinearSystem::scalar(a, b, 1.0);
        let tr = simulate(&sys, &[x0], &vec![vec![u]; 30]).unwrap();
        // x_t = a^t x0 + b u (1 − a^t)/(1 − a)
        for (t, x) in tr.states.iter().enumerate() {
            let at = a.powi(t as i32);
            let want = at * x0 + b * u * (1.0 - at) / (1.0 - a);
            prop_assert!((x[0] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
        prop_assert_eq!(sys.n_x(), 1);
    }

    #[test]
    fn saturation_caps_the_feed_disturbance(u in 0.5f64..50.0) {
        let p = DistillationParams::default();
        let x = [0.9, 0.7, 0.5, 0.2];
        prop_assert_eq!(column_rhs(&x, u, &p), column_rhs(&x, 0.5, &p));
        let col = DistillationColumn::new(p, IntegratorConfig::default()).unwrap();
        prop_assert_eq!(col.step_absolute(&x, u).unwrap(), col.step_absolute(&x, 0.5).unwrap());
        prop_assert_eq!(col.step_absolute(&x, -u).unwrap(), col.step_absolute(&x, -0.5).unwrap());
    }
}
