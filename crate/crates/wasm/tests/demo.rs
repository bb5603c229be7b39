//! Native checks of the demo entry points. Error paths construct `JsError`,
//! which needs a JS host, so only successful calls are exercised here.

use dissipakit_wasm::{beta_curve, learn_scalar, simulate_column};
use serde_json::Value;

fn parse(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn column_response_has_matching_lengths() {
    let v = parse(&simulate_column(0.2, 20, 150, 3).unwrap());
    assert_eq!(v["u"].as_array().unwrap().len(), 150);
    assert_eq!(v["y"].as_array().unwrap().len(), 150);
    assert_eq!(v["x"].as_array().unwrap().len(), 151);
    assert_eq!(simulate_column(0.2, 20, 150, 3).unwrap(), simulate_column(0.2, 20, 150, 3).unwrap());
}

#[test]
fn scalar_learn_feeds_the_gain_curve() {
    let v = parse(&learn_scalar(0.5, 0.5, 1.0, 20.0, 7).unwrap());
    assert!(v["verify"]["violation_rate"].as_f64().unwrap() <= 0.1);
    let cert = serde_json::to_string(&v["certificate"]).unwrap();
    let curve = parse(&beta_curve(&cert, 1e-2, 1e2, 40).unwrap());
    let pts = curve.as_array().unwrap();
    assert_eq!(pts.len(), 40);
    assert!((pts[0]["alpha"].as_f64().unwrap() - 1e-2).abs() < 1e-15);
    assert!((pts[39]["alpha"].as_f64().unwrap() - 1e2).abs() < 1e-12);
    // β* is the smallest β over all α.
    let beta_star = v["gain"]["beta_star"].as_f64().unwrap();
    let betas: Vec<f64> = pts.iter().filter_map(|p| p["beta"].as_f64()).collect();
    assert!(!betas.is_empty());
    assert!(betas.iter().all(|b| *b >= beta_star * (1.0 - 1e-6)));
}
