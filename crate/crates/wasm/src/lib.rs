//! Browser bindings for the demo page. Every function returns a JSON
//! string for the page script to parse.

use dissipakit::dynamics::{simulate, IntegratorConfig, LinearSystem, ModelSpec};
use dissipakit::parametric::{beta_at, learn_parametric, ParametricCertificate, DEFAULT_EPSILON, DEFAULT_ETA};
use dissipakit::sampling::{build_dataset, generate_excitation, DatasetSpec, ExcitationSpec};
use dissipakit::solver::SolverConfig;
use dissipakit::verify::verify_dataset;
use dissipakit::Certificate;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Distillation column response, in deviation variables, to a held
/// Gaussian reflux excitation.
#[wasm_bindgen]
pub fn simulate_column(sigma_u: f64, hold_steps: usize, horizon: usize, seed: u64) -> Result<String, JsError> {
    let model = ModelSpec::default().build(&IntegratorConfig::default()).map_err(js_err)?;
    let spec = ExcitationSpec { sigma_u, hold_steps, horizon, seed };
    let inputs = generate_excitation(&spec, model.n_u(), seed).map_err(js_err)?;
    let tr = simulate(model.as_ref(), &vec![0.0; model.n_x()], &inputs).map_err(js_err)?;
    let u: Vec<f64> = tr.inputs.iter().map(|v| v[0]).collect();
    let y: Vec<f64> = tr.outputs.iter().map(|v| v[0]).collect();
    Ok(json!({ "u": u, "y": y, "x": tr.states }).to_string())
}

/// Learns a quadratic certificate for `x⁺ = a x + b u`, `y = x` from `m`
/// simulated trajectories and checks it on a quarter of them held out.
#[wasm_bindgen]
pub fn learn_scalar(a: f64, b: f64, lambda: f64, sigma_u: f64, seed: u64) -> Result<String, JsError> {
    let sys = LinearSystem::scalar(a, b, 1.0);
    let spec = DatasetSpec {
        model: ModelSpec::linear(&sys),
        excitation: ExcitationSpec { sigma_u, hold_steps: 1, horizon: 50, seed: 0 },
        m: 8,
        seed,
        ..Default::default()
    };
    let data = build_dataset(&spec).map_err(js_err)?;
    let cert = learn_parametric(&data, lambda, DEFAULT_EPSILON, DEFAULT_ETA, &SolverConfig::default()).map_err(js_err)?;
    let gain = cert.gain_bound().ok();
    let wrapped = Certificate::Parametric(cert.clone());
    let report = verify_dataset(&wrapped, &data).map_err(js_err)?;
    Ok(json!({
        "certificate": cert,
        "objective": cert.objective(),
        "gain": gain.map(|g| json!({ "alpha_star": g.alpha_star, "beta_star": g.beta_star, "gain": g.gain() })),
        "verify": {
            "mean": report.mean,
            "std": report.std,
            "violation_rate": report.violation_rate,
            "margins": report.per_sample_margins,
        },
    })
    .to_string())
}

/// `β(α)` on a logarithmic grid over `[alpha_lo, alpha_hi]`; points where
/// the gain conditions cannot hold are `null`.
#[wasm_bindgen]
pub fn beta_curve(certificate_json: &str, alpha_lo: f64, alpha_hi: f64, points: usize) -> Result<String, JsError> {
    if !(alpha_lo > 0.0 && alpha_hi > alpha_lo && points >= 2) {
        return Err(JsError::new("need 0 < alpha_lo < alpha_hi and at least 2 points"));
    }
    let cert: ParametricCertificate = serde_json::from_str(certificate_json).map_err(js_err)?;
    let ratio = (alpha_hi / alpha_lo).ln();
    let mut curve = Vec::with_capacity(points);
    for k in 0..points {
        let alpha = alpha_lo * (ratio * k as f64 / (points - 1) as f64).exp();
        let beta = beta_at(&cert.q, cert.n_y, cert.n_u, alpha, cert.eta).map_err(js_err)?;
        curve.push(json!({ "alpha": alpha, "beta": beta }));
    }
    Ok(json!(curve).to_string())
}
