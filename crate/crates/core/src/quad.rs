//! Quadrature helpers shared by the coefficient and verification code.

use std::sync::OnceLock;

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};

/// Nodes and weights of the 32-point Gauss–Legendre rule on `[-1, 1]`.
pub(crate) fn gauss_legendre_32() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let rule = GaussLegendre::new(32.try_into().unwrap());
        let mut pairs: Vec<(f64, f64)> = rule.into_node_weight_pairs().into_vec();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs
    })
}

/// 32-point Gauss–Legendre estimate of `∫_a^b g(x) dx`, sampled uniformly in `ln x`.
///
/// Requires `0 < a < b`.
pub(crate) fn gauss_legendre_log(a: f64, b: f64, g: impl Fn(f64) -> f64) -> f64 {
    let (la, lb) = (a.ln(), b.ln());
    let half = 0.5 * (lb - la);
    let mid = 0.5 * (lb + la);
    gauss_legendre_32()
        .iter()
        .map(|&(t, w)| {
            let x = (mid + half * t).exp();
            w * g(x) * x
        })
        .sum::<f64>()
        * half
}

/// Nodes and weights of the 16-point Gauss–Legendre rule on `[-1, 1]`.
fn gauss_legendre_16() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let rule = GaussLegendre::new(16.try_into().unwrap());
        rule.into_node_weight_pairs().into_vec()
    })
}

fn apply_rule(rule: &[(f64, f64)], g: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    rule.iter()
        .map(|&(t, w)| w * g(mid + half * t))
        .sum::<f64>()
        * half
}

/// Adaptive Gauss–Legendre on `[a, b]`: the 16- and 32-point estimates are
/// compared and the interval bisected until they agree to `abs_tol`.
fn adaptive(g: &impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64, depth: u32) -> Result<f64> {
    let fine = apply_rule(gauss_legendre_32(), g, a, b);
    let coarse = apply_rule(gauss_legendre_16(), g, a, b);
    if !fine.is_finite() {
        return Err(Error::Quadrature(format!(
            "non-finite integrand on [{a}, {b}]"
        )));
    }
    if (fine - coarse).abs() <= abs_tol {
        return Ok(fine);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "no convergence on [{a}, {b}]: estimates {fine} and {coarse}"
        )));
    }
    let m = 0.5 * (a + b);
    Ok(adaptive(g, a, m, 0.5 * abs_tol, depth - 1)? + adaptive(g, m, b, 0.5 * abs_tol, depth - 1)?)
}

/// Largest `u = -ln z` considered, keeping `z` a normal float.
const U_MAX: f64 = 700.0;

/// Adaptive estimate of `∫_0^1 g(z) dz` for integrands with an integrable
/// algebraic singularity at `z = 0`.
///
/// The integral is evaluated in `u = -ln z` over dyadic segments
/// `[0,1], [1,2], [2,4], ...`, further split at `breaks` (points in `z` where
/// `g` has kinks).
pub(crate) fn integrate_unit(g: impl Fn(f64) -> f64, rel_tol: f64, breaks: &[f64]) -> Result<f64> {
    let h = |u: f64| {
        let z = (-u).exp();
        g(z) * z
    };
    let mut cuts: Vec<f64> = vec![0.0];
    let mut hi = 1.0;
    while hi < U_MAX {
        cuts.push(hi);
        hi *= 2.0;
    }
    cuts.push(U_MAX);
    cuts.extend(
        breaks
            .iter()
            .filter(|z| **z > 0.0 && **z < 1.0)
            .map(|z| -z.ln())
            .filter(|u| *u < U_MAX),
    );
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let scale: f64 = cuts
        .windows(2)
        .map(|w| apply_rule(gauss_legendre_32(), &h, w[0], w[1]).abs())
        .sum();
    if !scale.is_finite() {
        return Err(Error::Quadrature("integral over (0,1) diverges".into()));
    }
    let abs_tol = 0.1 * rel_tol * scale.max(f64::MIN_POSITIVE) / (cuts.len() - 1) as f64;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += adaptive(&h, w[0], w[1], abs_tol, 40)?;
    }
    Ok(total)
}
