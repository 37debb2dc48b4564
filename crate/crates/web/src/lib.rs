//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string; failures become a JS exception.

use serde_json::json;
use wasm_bindgen::prelude::*;

use coagfrag::io_cli::{parse_config, solve};
use coagfrag::verify::solve_bernstein;
use coagfrag::{predicted_tau, CoagulationParams, DaughterSpec, FragmentationParams};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Stationary state for `K = x^α y^β + x^β y^α`, `a = x^γ`, power-law daughters.
///
/// Returns `{converged, x, f, mass, tau_hat, tau_predicted, max_weak_residual}`.
#[wasm_bindgen]
pub fn solve_stationary(
    alpha: f64,
    beta: f64,
    gamma: f64,
    nu: f64,
    n_cells: usize,
) -> Result<String, JsError> {
    stationary_json(alpha, beta, gamma, nu, n_cells).map_err(js_err)
}

fn stationary_json(
    alpha: f64,
    beta: f64,
    gamma: f64,
    nu: f64,
    n_cells: usize,
) -> coagfrag::Result<String> {
    let text = format!(
        "rho = 1.0\n\
         grid.x_min = 1e-6\ngrid.x_max = 1e3\ngrid.n_cells = {n_cells}\n\
         coagulation.alpha = {alpha:?}\ncoagulation.beta = {beta:?}\n\
         fragmentation.gamma = {gamma:?}\nfragmentation.nu = {nu:?}\n\
         verify.exponential = [0.1, 1.0, 10.0]\n"
    );
    let out = solve(&parse_config(&text)?)?;
    let a = &out.report.analysis;
    Ok(json!({
        "converged": out.report.converged,
        "x": out.state.grid().pivots(),
        "f": out.state.densities(),
        "mass": a.mass,
        "tau_hat": a.exponent_fit.as_ref().map(|fit| fit.tau_hat),
        "tau_predicted": a.tau_predicted.tau(),
        "max_weak_residual": a.weak_form.max_residual(),
    })
    .to_string())
}

/// Solution `U(s)` of `s(U² + U) = 2∫_0^s U`, as `{s, u, max_residual, limit}`.
#[wasm_bindgen]
pub fn bernstein_curve(s_max: f64, points: usize) -> Result<String, JsError> {
    let b = solve_bernstein(s_max, points).map_err(js_err)?;
    Ok(json!({
        "s": b.s,
        "u": b.u,
        "max_residual": b.max_residual,
        "limit": b.limit,
    })
    .to_string())
}

/// Predicted small-size exponent and the branch that produced it.
#[wasm_bindgen]
pub fn predict_exponent(alpha: f64, beta: f64, gamma: f64, nu: f64) -> Result<String, JsError> {
    prediction_json(alpha, beta, gamma, nu).map_err(js_err)
}

fn prediction_json(alpha: f64, beta: f64, gamma: f64, nu: f64) -> coagfrag::Result<String> {
    let c = CoagulationParams::new(1.0, alpha, beta)?;
    let f = FragmentationParams::new(1.0, gamma, DaughterSpec::power_law(nu, 2.0)?)?;
    Ok(serde_json::to_string(&predicted_tau(&c, &f))?)
}
