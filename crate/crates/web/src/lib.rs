//! Browser bindings: each export takes plain numbers and returns a JSON
//! string for the page to plot.

use std::sync::Arc;

use plap::continuation::{trace_lambda, ContinuationOptions};
use plap::solvers::{solve_Plambda, SolveOptions};
use plap::spectra::{gamma1, k0, m_p, SpectraOptions};
use plap::{Domain, Field, Grid, ProblemSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Profile {
    accepted: bool,
    energy: f64,
    residual: f64,
    min: f64,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct SolveOut {
    x: Vec<f64>,
    gamma1: f64,
    solutions: Vec<Profile>,
    lineage: Vec<String>,
}

#[derive(Serialize)]
struct BranchOut {
    lambda: Vec<f64>,
    sup: Vec<f64>,
    min: Vec<f64>,
    fold: Option<(f64, f64)>,
    gamma1: f64,
    truncated: bool,
}

#[derive(Serialize)]
struct CoercivityOut {
    kappa: Vec<f64>,
    m_p: Vec<f64>,
    k0: f64,
}

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn json<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(err)
}

fn grid(n: usize) -> Result<Arc<Grid>, JsValue> {
    Ok(Arc::new(Grid::new(Domain::Interval { a: 0.0, b: 1.0 }, n).map_err(err)?))
}

fn first_eigenvalue(g: &Arc<Grid>, p: f64) -> Result<f64, JsValue> {
    Ok(gamma1(&Field::constant(g, 1.0), p, &SpectraOptions::default()).map_err(err)?.value.as_f64())
}

/// Solutions on (0, 1) with `c ≡ 1` and a constant datum `h`.
#[wasm_bindgen]
pub fn solve(p: f64, mu: f64, lambda: f64, h: f64, n: usize) -> Result<String, JsValue> {
    let g = grid(n)?;
    let spec = ProblemSpec::new(p, mu, lambda, Field::constant(&g, 1.0), Field::constant(&g, h)).map_err(err)?;
    let reports = solve_Plambda(&spec, &SolveOptions::default()).map_err(err)?;
    let lineage = reports.iter().flat_map(|r| r.lineage.iter().cloned()).collect();
    let solutions = reports
        .iter()
        .filter(|r| r.converged())
        .map(|r| Profile { accepted: r.accepted(), energy: r.energy, residual: r.residual_p, min: r.min_value, values: r.solution.values().to_vec() })
        .collect();
    json(&SolveOut { x: g.nodes().to_vec(), gamma1: first_eigenvalue(&g, p)?, solutions, lineage })
}

/// Solution branch in `λ` from 0 up to `lambda_max` for a constant datum.
#[wasm_bindgen]
pub fn branch(p: f64, mu: f64, h: f64, lambda_max: f64, n: usize) -> Result<String, JsValue> {
    let g = grid(n)?;
    let spec = ProblemSpec::new(p, mu, 0.0, Field::constant(&g, 1.0), Field::constant(&g, h)).map_err(err)?;
    let g1 = first_eigenvalue(&g, p)?;
    let opts = ContinuationOptions { window: Some(1e-3 * g1), ..Default::default() };
    let b = trace_lambda(&spec, (0.0, lambda_max), g1 / 100.0, &opts).map_err(err)?;
    json(&BranchOut {
        lambda: b.points.iter().map(|q| q.param).collect(),
        sup: b.points.iter().map(|q| q.sup_norm).collect(),
        min: b.points.iter().map(|q| q.min_value).collect(),
        fold: b.fold.map(|f| f.window),
        gamma1: g1,
        truncated: b.truncated,
    })
}

/// Sign indicator `m_p(κ)` for constant data `κ` in `[0, kappa_max]`, plus the threshold.
#[wasm_bindgen]
pub fn coercivity(p: f64, mu: f64, kappa_max: f64, samples: usize, n: usize) -> Result<String, JsValue> {
    let g = grid(n)?;
    let opts = SpectraOptions::default();
    let samples = samples.max(2);
    let mut kappa = Vec::with_capacity(samples);
    let mut values = Vec::with_capacity(samples);
    for i in 0..samples {
        let k = kappa_max * i as f64 / (samples - 1) as f64;
        kappa.push(k);
        values.push(m_p(&Field::constant(&g, k), p, mu, &opts).map_err(err)?.value.as_f64());
    }
    let threshold = k0(&Field::constant(&g, 1.0), p, mu, &opts).map_err(err)?.value.as_f64();
    json(&CoercivityOut { kappa, m_p: values, k0: threshold })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_returns_profiles() {
        let s = solve(2.0, 1.0, 0.0, 1.0, 33).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["x"].as_array().unwrap().len(), 33);
        assert!(v["solutions"][0]["accepted"].as_bool().unwrap());
    }

    #[test]
    fn coercivity_changes_sign_at_threshold() {
        let s = coercivity(2.0, 1.0, 20.0, 5, 65).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        let m: Vec<f64> = v["m_p"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!(m[1] > 0.0 && m[4] < 0.0);
        assert!((v["k0"].as_f64().unwrap() - 9.87).abs() < 0.1);
    }

    #[test]
    fn branch_folds_for_positive_datum() {
        let s = branch(2.0, 1.0, 1.0, 12.0, 65).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert!(v["fold"].is_array());
    }
}
