//! Independent checks of computed stationary states: moment functionals,
//! the weak stationarity residual, closed-form oracles and small-size
//! exponent fits.

use serde::Serialize;

use crate::coefficients::{CoagulationParams, DaughterSpec, FragmentationParams, Truncation};
use crate::error::{domain, Error, Result};
use crate::operators::{apply_rhs, weighted_sum, CoagTables, DistributionState, FragTables};
use crate::quad;

/// `M_m = Σ x_i^m f_i w_i`.
pub fn moment(s: &DistributionState, m: f64) -> f64 {
    weighted_sum(s.grid(), s.densities(), |x| x.powf(m))
}

/// `L_{m,p} = Σ x_i^m f_i^p w_i`.
pub fn weighted_lp(s: &DistributionState, m: f64, p: f64) -> f64 {
    let g = s.grid();
    g.pivots()
        .iter()
        .zip(g.widths())
        .zip(s.densities())
        .map(|((x, w), f)| x.powf(m) * f.powf(p) * w)
        .sum()
}

/// Bounded Lipschitz test functions vanishing at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `1 - e^{-s x}`
    Exponential { s: f64 },
    /// `min(x, R)`
    CappedLinear { r: f64 },
    /// `min(x, R)^m`
    PowerSmall { m: f64, r: f64 },
}

/// Rates probed by the default exponential family.
pub const DEFAULT_EXPONENTIAL_RATES: [f64; 5] = [0.1, 0.3, 1.0, 3.0, 10.0];

impl TestFunction {
    pub fn exponential(s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(domain(format!(
                "exponential rate must be positive, got {s}"
            )));
        }
        Ok(Self::Exponential { s })
    }

    pub fn capped_linear(r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(domain(format!("cap must be positive, got {r}")));
        }
        Ok(Self::CappedLinear { r })
    }

    pub fn power_small(m: f64, r: f64) -> Result<Self> {
        if !(m > 0.0 && m <= 1.0) {
            return Err(domain(format!("exponent must lie in (0,1], got {m}")));
        }
        if !(r > 0.0) {
            return Err(domain(format!("cap must be positive, got {r}")));
        }
        Ok(Self::PowerSmall { m, r })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Self::Exponential { s } => -(-s * x).exp_m1(),
            Self::CappedLinear { r } => x.min(r),
            Self::PowerSmall { m, r } => x.min(r).powf(m),
        }
    }

    /// Points in `(0, ∞)` where the function has a kink.
    fn kink(&self) -> Option<f64> {
        match *self {
            Self::Exponential { .. } => None,
            Self::CappedLinear { r } | Self::PowerSmall { r, .. } => {
                Some(r).filter(|r| r.is_finite())
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Self::Exponential { s } => format!("exponential(s={s})"),
            Self::CappedLinear { r } => format!("capped_linear(R={r})"),
            Self::PowerSmall { m, r } => format!("power_small(m={m},R={r})"),
        }
    }
}

/// `χ_ϑ(x, y) = ϑ(x + y) - ϑ(x) - ϑ(y)`.
pub fn chi_theta(t: &TestFunction, x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0 && y > 0.0) {
        return Err(domain(format!("sizes must be positive, got ({x}, {y})")));
    }
    Ok(match *t {
        // Factored form avoids cancellation.
        TestFunction::Exponential { s } => -((-s * x).exp_m1() * (-s * y).exp_m1()),
        // Subtracting the sum keeps the capped-linear sign exact: fl(x+y) <= R gives 0.
        _ => t.eval(x + y) - (t.eval(x) + t.eval(y)),
    })
}

/// `N_ϑ(y) = ϑ(y) - ∫_0^1 ϑ(y z) B(z) dz`.
pub fn n_theta(t: &TestFunction, d: &DaughterSpec, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(domain(format!("size must be positive, got {y}")));
    }
    let mut breaks = d.breakpoints().to_vec();
    if let Some(r) = t.kink() {
        breaks.push(r / y);
    }
    let gained = quad::integrate_unit(
        |z| t.eval(y * z) * d.eval_unchecked(z),
        N_THETA_REL_TOL,
        &breaks,
    )?;
    Ok(t.eval(y) - gained)
}

const N_THETA_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakFormEntry {
    pub test_function: TestFunction,
    /// `½ ΣΣ K χ_ϑ f f w w`
    pub lhs: f64,
    /// `Σ a N_ϑ f w`
    pub rhs: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakFormReport {
    pub entries: Vec<WeakFormEntry>,
}

impl WeakFormReport {
    pub fn max_residual(&self) -> f64 {
        self.entries.iter().map(|e| e.residual).fold(0.0, f64::max)
    }
}

const RESIDUAL_FLOOR: f64 = 1e-30;

fn relative_residual(lhs: f64, rhs: f64, floor: f64) -> f64 {
    (lhs - rhs).abs() / (lhs.abs() + rhs.abs() + floor)
}

/// Stationary weak form evaluated with the continuum weights `χ_ϑ` and
/// `N_ϑ` sampled on the pivots, using coefficients truncated by `t`.
pub fn weak_form_residual(
    s: &DistributionState,
    c: &CoagulationParams,
    f: &FragmentationParams,
    t: &Truncation,
    tests: &[TestFunction],
) -> Result<WeakFormReport> {
    let g = s.grid();
    let x = g.pivots();
    let w = g.widths();
    let dens = s.densities();
    let n = x.len();
    let floor = f.a0() * s.mass().max(0.0) * RESIDUAL_FLOOR + f64::MIN_POSITIVE;
    let mut entries = Vec::with_capacity(tests.len());
    for th in tests {
        let mut lhs = 0.0;
        for i in 0..n {
            if dens[i] == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for j in 0..n {
                if dens[j] == 0.0 {
                    continue;
                }
                row += c.kernel_truncated_unchecked(t, x[i], x[j])
                    * chi_theta(th, x[i], x[j])?
                    * dens[j]
                    * w[j];
            }
            lhs += row * dens[i] * w[i];
        }
        lhs *= 0.5;
        let mut rhs = 0.0;
        for k in 0..n {
            if dens[k] == 0.0 {
                continue;
            }
            rhs += f.rate_truncated_unchecked(t, x[k])
                * n_theta(th, f.daughter(), x[k])?
                * dens[k]
                * w[k];
        }
        entries.push(WeakFormEntry {
            test_function: *th,
            lhs,
            rhs,
            residual: relative_residual(lhs, rhs, floor),
        });
    }
    Ok(WeakFormReport { entries })
}

/// The two sides of the weak form built from the discrete tables: the
/// coagulation side with `χ` taken over the split product cells and the
/// fragmentation side with `N` taken over the redistribution columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscreteWeakForm {
    pub coagulation: f64,
    pub fragmentation: f64,
}

impl DiscreteWeakForm {
    /// `Σ ϑ_i (rate)_i w_i` implied by the two sides.
    pub fn total(&self) -> f64 {
        self.coagulation - self.fragmentation
    }
}

/// Discrete weak form of the semi-discrete system for values `theta` on the
/// pivots.
pub fn discrete_weak_form(
    coag: &CoagTables,
    frag: &FragTables,
    s: &DistributionState,
    theta: &[f64],
) -> Result<DiscreteWeakForm> {
    let g = s.grid();
    if theta.len() != g.len() || s.densities().len() != g.len() || coag.grid().len() != g.len() {
        return Err(Error::DimensionMismatch {
            expected: g.len(),
            got: theta.len(),
        });
    }
    let f = s.densities();
    let w = g.widths();
    let mut coagulation = 0.0;
    for p in coag.pairs() {
        let r = crate::operators::pair_event_rate(p, f, w);
        if r == 0.0 {
            continue;
        }
        let gained = if p.overflow {
            0.0
        } else {
            p.w_lo * theta[p.target]
                + if p.w_hi > 0.0 {
                    p.w_hi * theta[p.target + 1]
                } else {
                    0.0
                }
        };
        coagulation += r * (gained - theta[p.i] - theta[p.j]);
    }
    let mut fragmentation = 0.0;
    for k in 0..g.len() {
        let broken = frag.loss_rates()[k] * f[k] * w[k];
        if broken == 0.0 {
            continue;
        }
        let spread: f64 = frag
            .column(k)
            .iter()
            .enumerate()
            .map(|(i, gik)| theta[i] * gik * w[i])
            .sum();
        fragmentation += broken * (theta[k] - spread);
    }
    Ok(DiscreteWeakForm {
        coagulation,
        fragmentation,
    })
}

/// `Σ ϑ_i (rate)_i w_i` through the operator application.
pub fn operator_weak_form(
    coag: &CoagTables,
    frag: &FragTables,
    s: &DistributionState,
    theta: &[f64],
) -> Result<f64> {
    let (rate, _) = apply_rhs(coag, frag, s)?;
    if theta.len() != rate.len() {
        return Err(Error::DimensionMismatch {
            expected: rate.len(),
            got: theta.len(),
        });
    }
    let w = s.grid().widths();
    Ok(theta
        .iter()
        .zip(&rate)
        .zip(w)
        .map(|((t, r), w)| t * r * w)
        .sum())
}

/// Closed-form stationary state of the constant kernel with binary uniform
/// breakage and linear rate: `φ(x) = A0 z^x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantKernelReference {
    pub z: f64,
    pub a0: f64,
}

impl ConstantKernelReference {
    pub fn density(&self, x: f64) -> f64 {
        self.a0 * (x * self.z.ln()).exp()
    }

    /// `M0 = A0 / ln(1/z)`.
    pub fn number(&self) -> f64 {
        self.a0 / (-self.z.ln())
    }
}

pub fn constant_kernel_reference(rho: f64, a0: f64) -> Result<ConstantKernelReference> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(domain(format!("rho must be positive, got {rho}")));
    }
    if !(a0 > 0.0 && a0.is_finite()) {
        return Err(domain(format!("A0 must be positive, got {a0}")));
    }
    Ok(ConstantKernelReference {
        z: (-(a0 / rho).sqrt()).exp(),
        a0,
    })
}

/// Solution of `s (U² + U) = 2 ∫_0^s U` with `U(s) ~ s` at the origin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernsteinSolution {
    pub s: Vec<f64>,
    pub u: Vec<f64>,
    /// `|U² + U - (2/s) ∫_0^s U|` at each grid point.
    pub residual: Vec<f64>,
    pub max_residual: f64,
    /// Difference quotient over the first grid interval.
    pub slope_at_zero: f64,
    /// `U` at the last grid point.
    pub limit: f64,
}

/// Starting point of the integration.
pub const BERNSTEIN_S0: f64 = 1e-6;

/// Largest step in `ln s` taken by the integrator.
const BERNSTEIN_MAX_STEP: f64 = 1e-3;

/// Integrates the Bernstein equation in `t = ln s`, where it becomes the
/// autonomous system `U' = (U - U²)/(1 + 2U)`, `I' = U e^t` for `I = ∫_0^s U`.
pub fn solve_bernstein(s_max: f64, n_points: usize) -> Result<BernsteinSolution> {
    if !(s_max >= 1e3 && s_max.is_finite()) {
        return Err(domain(format!("s_max must be at least 1e3, got {s_max}")));
    }
    if n_points < 200 {
        return Err(domain(format!(
            "at least 200 points required, got {n_points}"
        )));
    }
    let rhs = |t: f64, y: [f64; 2]| -> [f64; 2] {
        let u = y[0];
        [(u - u * u) / (1.0 + 2.0 * u), u * t.exp()]
    };
    let (t0, t1) = (BERNSTEIN_S0.ln(), s_max.ln());
    let dt_out = (t1 - t0) / (n_points - 1) as f64;
    let sub = (dt_out / BERNSTEIN_MAX_STEP).ceil() as usize;
    let h = dt_out / sub as f64;
    let mut y = [BERNSTEIN_S0, 0.5 * BERNSTEIN_S0 * BERNSTEIN_S0];
    let mut s = Vec::with_capacity(n_points);
    let mut u = Vec::with_capacity(n_points);
    let mut residual = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let t = t0 + k as f64 * dt_out;
        if k > 0 {
            let start = t - dt_out;
            for m in 0..sub {
                let tm = start + m as f64 * h;
                let k1 = rhs(tm, y);
                let k2 = rhs(
                    tm + 0.5 * h,
                    [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]],
                );
                let k3 = rhs(
                    tm + 0.5 * h,
                    [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]],
                );
                let k4 = rhs(tm + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
                for c in 0..2 {
                    y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
                }
            }
            if !(y[0].is_finite() && y[1].is_finite()) {
                return Err(Error::Integration(format!(
                    "non-finite state at s={}",
                    t.exp()
                )));
            }
        }
        let sk = if k + 1 == n_points { s_max } else { t.exp() };
        s.push(sk);
        u.push(y[0]);
        residual.push((y[0] * y[0] + y[0] - 2.0 * y[1] / sk).abs());
    }
    let max_residual = residual.iter().copied().fold(0.0, f64::max);
    let slope_at_zero = (u[1] - u[0]) / (s[1] - s[0]);
    let limit = *u.last().unwrap();
    Ok(BernsteinSolution {
        s,
        u,
        residual,
        max_residual,
        slope_at_zero,
        limit,
    })
}

/// Residual of the Bernstein equation for the transform of a computed state
/// in the product-kernel family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DlpProfile {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    pub residual: Vec<f64>,
}

impl DlpProfile {
    /// Largest residual over `s ∈ [lo, hi]`.
    pub fn max_residual_on(&self, lo: f64, hi: f64) -> f64 {
        self.s
            .iter()
            .zip(&self.residual)
            .filter(|(s, _)| **s >= lo && **s <= hi)
            .map(|(_, r)| *r)
            .fold(0.0, f64::max)
    }
}

/// `1 - (1 - e^{-q})/q`, accurate for small `q`.
fn one_minus_mean_exp(q: f64) -> f64 {
    if q < 1e-4 {
        q / 2.0 - q * q / 6.0 + q * q * q / 24.0
    } else {
        1.0 + (-q).exp_m1() / q
    }
}

/// Evaluates `W² + W - (2/s) ∫_0^s W` for
/// `W(s) = Σ (1 - e^{-s x_i}) k0 x_i^{λ/2} f_i w_i / (2 A0)` at the points `s_values`.
pub fn dlp_profile_check(
    state: &DistributionState,
    k0: f64,
    a0: f64,
    lambda: f64,
    s_values: &[f64],
) -> Result<DlpProfile> {
    if !(k0 > 0.0 && a0 > 0.0) {
        return Err(domain("k0 and A0 must be positive"));
    }
    let g = state.grid();
    let weights: Vec<f64> = g
        .pivots()
        .iter()
        .zip(g.widths())
        .zip(state.densities())
        .map(|((x, w), f)| k0 * x.powf(0.5 * lambda) * f * w / (2.0 * a0))
        .collect();
    let mut w_out = Vec::with_capacity(s_values.len());
    let mut residual = Vec::with_capacity(s_values.len());
    for &s in s_values {
        if !(s >= 0.0) {
            return Err(domain(format!("s must be nonnegative, got {s}")));
        }
        let mut w = 0.0;
        let mut mean = 0.0;
        for (x, c) in g.pivots().iter().zip(&weights) {
            w += -(-s * x).exp_m1() * c;
            // (1/s) ∫_0^s (1 - e^{-r x}) dr
            mean += one_minus_mean_exp(s * x) * c;
        }
        w_out.push(w);
        residual.push(if s == 0.0 {
            0.0
        } else {
            (w * w + w - 2.0 * mean).abs()
        });
    }
    Ok(DlpProfile {
        s: s_values.to_vec(),
        w: w_out,
        residual,
    })
}

/// Log-spaced points, both ends included.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n.max(2) - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub tau_hat: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub r_squared: f64,
    pub cells: usize,
}

/// Cells skipped next to `x_min` by [`fit_small_size_exponent`].
pub const FIT_BOUNDARY_CELLS: usize = 5;

/// Minimum number of cells in a fit window.
pub const FIT_MIN_CELLS: usize = 8;

/// Fits `f ~ A x^{-τ}` over `decades` decades starting
/// [`FIT_BOUNDARY_CELLS`] cells above `x_min`.
pub fn fit_small_size_exponent(s: &DistributionState, decades: f64) -> Result<ExponentFit> {
    if !(decades > 0.0) {
        return Err(domain(format!("decades must be positive, got {decades}")));
    }
    let x = s.grid().pivots();
    if x.len() <= FIT_BOUNDARY_CELLS {
        return Err(domain("grid too small for an exponent fit"));
    }
    let lo = x[FIT_BOUNDARY_CELLS];
    fit_exponent_window(s, lo, lo * 10f64.powf(decades) * (1.0 + 1e-12))
}

/// Least-squares slope of `ln f` against `ln x` over pivots in `[x_lo, x_hi]`.
pub fn fit_exponent_window(s: &DistributionState, x_lo: f64, x_hi: f64) -> Result<ExponentFit> {
    let g = s.grid();
    if !(x_lo < x_hi) || x_lo < g.x_min() || x_hi > g.x_max() {
        return Err(domain(format!(
            "fit window [{x_lo:e}, {x_hi:e}] must lie inside the grid [{:e}, {:e}]",
            g.x_min(),
            g.x_max()
        )));
    }
    let pts: Vec<(f64, f64)> = g
        .pivots()
        .iter()
        .zip(s.densities())
        .filter(|(x, _)| **x >= x_lo && **x <= x_hi)
        .map(|(x, f)| (x.ln(), f.ln()))
        .collect();
    if pts.len() < FIT_MIN_CELLS {
        return Err(domain(format!(
            "fit window holds {} cells, at least {FIT_MIN_CELLS} required",
            pts.len()
        )));
    }
    if pts.iter().any(|(_, lf)| !lf.is_finite()) {
        return Err(domain("density vanishes inside the fit window"));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    Ok(ExponentFit {
        tau_hat: -slope,
        x_lo,
        x_hi,
        r_squared,
        cells: pts.len(),
    })
}
