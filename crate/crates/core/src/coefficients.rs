//! Coagulation kernel, fragmentation rate and daughter distributions.
//!
//! The kernel is `K(x, y) = K0 (x^α y^β + x^β y^α)` with `0 ≤ α ≤ β ≤ 1` and
//! `λ = α + β < 1`. Particles of size `y` break at rate `a(y) = a0 y^γ` into
//! fragments distributed as `b(x, y) = B(x / y) / y`, where `B` carries unit
//! first moment on `(0, 1)` so that breakage conserves mass.
//!
//! The regularized coefficients used by the time-dependent solver cap sizes
//! at `j` and add positive floors proportional to `ε`:
//!
//! ```text
//! K_{j,ε}(x, y) = 2 ε K0 + K(min(x, j), min(y, j))
//! a_{j,ε}(x)    = a0 (min(x, j)^γ + ε²)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quad;

/// Relative tolerance used for the quadrature fallbacks in this module.
pub const QUAD_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoagulationParams {
    k0: f64,
    alpha: f64,
    beta: f64,
    lambda: f64,
}

impl CoagulationParams {
    /// Kernel parameters admissible for the stationary problem (`λ < 1`).
    pub fn new(k0: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Self::kernel_only(k0, alpha, beta)?;
        if !(p.lambda < 1.0) {
            return Err(domain(format!(
                "alpha+beta must lie in [0,1), got {}",
                p.lambda
            )));
        }
        Ok(p)
    }

    /// Kernel parameters without the `λ < 1` restriction, for evaluating
    /// the kernel alone. Solver entry points reject these via
    /// [`CoagulationParams::is_admissible`].
    pub fn kernel_only(k0: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(k0 > 0.0 && k0.is_finite()) {
            return Err(domain(format!("K0 must be positive, got {k0}")));
        }
        if !(0.0 <= alpha && alpha <= beta && beta <= 1.0) {
            return Err(domain(format!(
                "exponents must satisfy 0 <= alpha <= beta <= 1, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(Self {
            k0,
            alpha,
            beta,
            lambda: alpha + beta,
        })
    }

    pub fn is_admissible(&self) -> bool {
        self.lambda < 1.0
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Untruncated kernel value.
    pub fn kernel(&self, x: f64, y: f64) -> Result<f64> {
        check_size(x)?;
        check_size(y)?;
        Ok(self.kernel_unchecked(x, y))
    }

    /// Truncated, regularized kernel `K_{j,ε}`.
    pub fn kernel_truncated(&self, t: &Truncation, x: f64, y: f64) -> Result<f64> {
        check_size(x)?;
        check_size(y)?;
        Ok(self.kernel_truncated_unchecked(t, x, y))
    }

    #[inline]
    pub(crate) fn kernel_unchecked(&self, x: f64, y: f64) -> f64 {
        self.k0 * (x.powf(self.alpha) * y.powf(self.beta) + x.powf(self.beta) * y.powf(self.alpha))
    }

    #[inline]
    pub(crate) fn kernel_truncated_unchecked(&self, t: &Truncation, x: f64, y: f64) -> f64 {
        2.0 * t.epsilon * self.k0 + self.kernel_unchecked(t.cap(x), t.cap(y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FragmentationParams {
    a0: f64,
    gamma: f64,
    daughter: DaughterSpec,
}

impl FragmentationParams {
    pub fn new(a0: f64, gamma: f64, daughter: DaughterSpec) -> Result<Self> {
        if !(a0 > 0.0 && a0.is_finite()) {
            return Err(domain(format!("a0 must be positive, got {a0}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(domain(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self {
            a0,
            gamma,
            daughter,
        })
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn daughter(&self) -> &DaughterSpec {
        &self.daughter
    }

    /// Untruncated breakage rate `a0 x^γ`.
    pub fn rate(&self, x: f64) -> Result<f64> {
        check_size(x)?;
        Ok(self.a0 * x.powf(self.gamma))
    }

    /// Truncated, regularized breakage rate `a_{j,ε}`.
    pub fn rate_truncated(&self, t: &Truncation, x: f64) -> Result<f64> {
        check_size(x)?;
        Ok(self.rate_truncated_unchecked(t, x))
    }

    #[inline]
    pub(crate) fn rate_truncated_unchecked(&self, t: &Truncation, x: f64) -> f64 {
        self.a0 * (t.cap(x).powf(self.gamma) + t.epsilon * t.epsilon)
    }
}

/// Size cap `j` and regularization `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// `None` means no cap.
    j: Option<f64>,
    epsilon: f64,
}

impl Truncation {
    pub fn new(j: Option<f64>, epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(domain(format!("epsilon must lie in [0,1), got {epsilon}")));
        }
        if let Some(j) = j {
            if !(j >= 2.0) {
                return Err(domain(format!("size cap j must be at least 2, got {j}")));
            }
        }
        Ok(Self { j, epsilon })
    }

    /// No cap, no regularization.
    pub fn none() -> Self {
        Self {
            j: None,
            epsilon: 0.0,
        }
    }

    pub fn j(&self) -> Option<f64> {
        self.j
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    fn cap(&self, x: f64) -> f64 {
        match self.j {
            Some(j) => x.min(j),
            None => x,
        }
    }
}

/// Shape of the daughter distribution `B` on `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DaughterKind {
    /// `(ν+2) z^ν`, `ν > -1`.
    PowerLaw { nu: f64 },
    /// `(ν+2)(ν+1) z^(ν-1) (1-z)`, `ν > 0`.
    Parabolic { nu: f64 },
    /// Node values interpolated linearly in `ln z`.
    Tabulated { z: Vec<f64>, values: Vec<f64> },
}

/// Daughter distribution together with its integrability exponent `p0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DaughterSpec {
    #[serde(flatten)]
    kind: DaughterKind,
    p0: f64,
    /// Small-z power-law slope of tabulated data: `B(z) ≈ c z^slope`.
    #[serde(skip)]
    tail: Option<TailFit>,
}

/// Least-squares power-law fit of a tabulated distribution near `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TailFit {
    slope: f64,
    slope_stderr: f64,
    log_prefactor: f64,
}

/// Infimum of exponents `m` for which `z^m B(z)` is integrable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MStar {
    pub value: f64,
    /// Standard error of the estimate; zero for closed forms.
    pub uncertainty: f64,
    pub exact: bool,
}

impl DaughterSpec {
    pub fn power_law(nu: f64, p0: f64) -> Result<Self> {
        if !(nu > -1.0) {
            return Err(domain(format!("power-law nu must exceed -1, got {nu}")));
        }
        Self::finish(DaughterKind::PowerLaw { nu }, p0, None)
    }

    pub fn parabolic(nu: f64, p0: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(domain(format!("parabolic nu must be positive, got {nu}")));
        }
        Self::finish(DaughterKind::Parabolic { nu }, p0, None)
    }

    /// Tabulated distribution from nodes `0 < z_0 < ... ≤ 1`.
    pub fn tabulated(z: Vec<f64>, values: Vec<f64>, p0: f64) -> Result<Self> {
        if z.len() != values.len() || z.len() < 3 {
            return Err(domain(
                "tabulated daughter distribution needs at least 3 (z, B) pairs",
            ));
        }
        if !(z[0] > 0.0) || z.windows(2).any(|w| !(w[1] > w[0])) || z[z.len() - 1] > 1.0 {
            return Err(domain(
                "tabulated z must be strictly increasing inside (0, 1]",
            ));
        }
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(domain("tabulated B values must be finite and nonnegative"));
        }
        let tail = fit_tail(&z, &values)?;
        let spec = Self::finish(DaughterKind::Tabulated { z, values }, p0, Some(tail))?;
        let first = spec.frak_b_quadrature(1.0)?;
        if (first - 1.0).abs() > 1e-8 {
            return Err(domain(format!(
                "tabulated B must satisfy ∫ z B(z) dz = 1, got {first}"
            )));
        }
        Ok(spec)
    }

    /// Like [`DaughterSpec::tabulated`], after rescaling `values` so that
    /// the interpolant has unit first moment.
    pub fn tabulated_normalized(z: Vec<f64>, values: Vec<f64>, p0: f64) -> Result<Self> {
        if z.len() != values.len() || z.len() < 3 {
            return Err(domain(
                "tabulated daughter distribution needs at least 3 (z, B) pairs",
            ));
        }
        let tail = fit_tail(&z, &values)?;
        let raw = Self {
            kind: DaughterKind::Tabulated {
                z: z.clone(),
                values: values.clone(),
            },
            p0,
            tail: Some(tail),
        };
        let first = raw.frak_b_quadrature(1.0)?;
        if !(first > 0.0) {
            return Err(domain("tabulated B has zero first moment"));
        }
        Self::tabulated(z, values.iter().map(|v| v / first).collect(), p0)
    }

    fn finish(kind: DaughterKind, p0: f64, tail: Option<TailFit>) -> Result<Self> {
        if !(p0 > 1.0) {
            return Err(domain(format!("p0 must exceed 1, got {p0}")));
        }
        let spec = Self { kind, p0, tail };
        let ms = spec.m_star();
        let bound = (1.0 - p0) / p0;
        if ms.exact && !(ms.value < bound) {
            return Err(domain(format!(
                "B is not in L^p0 for p0={p0}: m_star={} must lie below (1-p0)/p0={bound}",
                ms.value
            )));
        }
        Ok(spec)
    }

    pub fn kind(&self) -> &DaughterKind {
        &self.kind
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    /// Evaluates `B(z)` for `z ∈ (0, 1)`.
    pub fn eval(&self, z: f64) -> Result<f64> {
        if !(z > 0.0 && z < 1.0) {
            return Err(domain(format!("B is defined on (0,1), got z={z}")));
        }
        Ok(self.eval_unchecked(z))
    }

    pub(crate) fn eval_unchecked(&self, z: f64) -> f64 {
        match &self.kind {
            DaughterKind::PowerLaw { nu } => (nu + 2.0) * z.powf(*nu),
            DaughterKind::Parabolic { nu } => {
                (nu + 2.0) * (nu + 1.0) * z.powf(nu - 1.0) * (1.0 - z)
            }
            DaughterKind::Tabulated { z: nodes, values } => {
                let tail = self.tail.expect("tabulated spec carries a tail fit");
                interpolate_log(nodes, values, &tail, z)
            }
        }
    }

    /// `ln B(z)`, finite wherever `B(z) > 0` even when `B` itself overflows.
    pub(crate) fn ln_eval_unchecked(&self, z: f64) -> f64 {
        match &self.kind {
            DaughterKind::PowerLaw { nu } => (nu + 2.0).ln() + nu * z.ln(),
            DaughterKind::Parabolic { nu } => {
                ((nu + 2.0) * (nu + 1.0)).ln() + (nu - 1.0) * z.ln() + (1.0 - z).ln()
            }
            DaughterKind::Tabulated { .. } => self.eval_unchecked(z).ln(),
        }
    }

    /// `𝔟_m = ∫_0^1 z^m B(z) dz`.
    pub fn frak_b(&self, m: f64) -> Result<f64> {
        let ms = self.m_star();
        if !(m > ms.value) {
            return Err(domain(format!(
                "moment of B diverges for m={m} <= m_star={}",
                ms.value
            )));
        }
        match &self.kind {
            DaughterKind::PowerLaw { nu } => Ok((nu + 2.0) / (m + nu + 1.0)),
            DaughterKind::Parabolic { nu } => {
                Ok((nu + 2.0) * (nu + 1.0) / ((m + nu) * (m + nu + 1.0)))
            }
            DaughterKind::Tabulated { .. } => self.frak_b_quadrature(m),
        }
    }

    /// `𝔟_m` by adaptive quadrature, independent of the closed forms.
    pub fn frak_b_quadrature(&self, m: f64) -> Result<f64> {
        quad::integrate_unit(
            |z| (m * z.ln() + self.ln_eval_unchecked(z)).exp(),
            QUAD_REL_TOL,
            self.breakpoints(),
        )
    }

    /// `ℬ_p = (∫_0^1 B(z)^p dz)^(1/p)` for `p ∈ [1, p0]`.
    pub fn frak_bp(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0 && p <= self.p0) {
            return Err(domain(format!(
                "p must lie in [1, p0={}], got {p}",
                self.p0
            )));
        }
        // Integrable iff p * (small-z exponent of B) > -1.
        let small_z_exponent = match &self.kind {
            DaughterKind::PowerLaw { nu } => *nu,
            DaughterKind::Parabolic { nu } => nu - 1.0,
            DaughterKind::Tabulated { .. } => self.tail.map(|t| t.slope).unwrap_or(0.0),
        };
        if !(p * small_z_exponent > -1.0) {
            return Err(domain(format!("∫ B^p diverges for p={p}")));
        }
        let integral = match &self.kind {
            DaughterKind::PowerLaw { nu } => (nu + 2.0).powf(p) / (p * nu + 1.0),
            _ => quad::integrate_unit(
                |z| self.eval_unchecked(z).powf(p),
                QUAD_REL_TOL,
                self.breakpoints(),
            )?,
        };
        Ok(integral.powf(1.0 / p))
    }

    /// `m⋆`, exact for the analytic families and estimated for tables.
    pub fn m_star(&self) -> MStar {
        match &self.kind {
            DaughterKind::PowerLaw { nu } => MStar {
                value: -(nu + 1.0),
                uncertainty: 0.0,
                exact: true,
            },
            DaughterKind::Parabolic { nu } => MStar {
                value: -nu,
                uncertainty: 0.0,
                exact: true,
            },
            DaughterKind::Tabulated { .. } => {
                let tail = self.tail.expect("tabulated spec carries a tail fit");
                MStar {
                    value: -(tail.slope + 1.0),
                    uncertainty: tail.slope_stderr,
                    exact: false,
                }
            }
        }
    }

    /// Points where `B` is not smooth.
    pub(crate) fn breakpoints(&self) -> &[f64] {
        match &self.kind {
            DaughterKind::Tabulated { z, .. } => z,
            _ => &[],
        }
    }

    /// Whether `m⋆ ≤ (1 - p0) / p0`.
    pub fn m_star_within_bound(&self) -> bool {
        self.m_star().value <= (1.0 - self.p0) / self.p0
    }
}

fn check_size(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(domain(format!(
            "sizes must be positive and finite, got {x}"
        )))
    }
}

/// Fits `ln B = c + s ln z` over the nodes in the smallest decade of `z`.
fn fit_tail(z: &[f64], values: &[f64]) -> Result<TailFit> {
    let limit = 10.0 * z[0];
    let pts: Vec<(f64, f64)> = z
        .iter()
        .zip(values)
        .take_while(|(zi, _)| **zi <= limit)
        .filter(|(_, v)| **v > 0.0)
        .map(|(zi, v)| (zi.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Domain(
            "tabulated B needs at least two positive nodes in its smallest decade".into(),
        ));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if pts.len() > 2 {
        let sse: f64 = pts
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(TailFit {
        slope,
        slope_stderr,
        log_prefactor: intercept,
    })
}

fn interpolate_log(nodes: &[f64], values: &[f64], tail: &TailFit, z: f64) -> f64 {
    if z < nodes[0] {
        return (tail.log_prefactor + tail.slope * z.ln()).exp();
    }
    let last = nodes.len() - 1;
    if z >= nodes[last] {
        return values[last];
    }
    let k = nodes.partition_point(|&n| n <= z) - 1;
    let t = (z.ln() - nodes[k].ln()) / (nodes[k + 1].ln() - nodes[k].ln());
    values[k] + t * (values[k + 1] - values[k])
}

/// Small-size exponent `τ` predicted by formal asymptotics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "branch", rename_all = "snake_case")]
pub enum TauPrediction {
    /// `γ > α`: `τ = α + 1 + m⋆`.
    FragmentationDominant { tau: f64 },
    /// `γ = α < β`: `τ = α + 1`.
    BalancedSum { tau: f64 },
    /// `γ = α = β` with power-law `B`: `τ = α + 2 / (ν + 3)`.
    BalancedProduct { tau: f64 },
    /// `γ < α`: `τ = λ + 1 - γ`.
    CoagulationDominant { tau: f64 },
    /// `γ = α = β` with a non power-law `B`: no formula available.
    Unsupported,
}

impl TauPrediction {
    pub fn tau(&self) -> Option<f64> {
        match *self {
            Self::FragmentationDominant { tau }
            | Self::BalancedSum { tau }
            | Self::BalancedProduct { tau }
            | Self::CoagulationDominant { tau } => Some(tau),
            Self::Unsupported => None,
        }
    }
}

/// Exponents compared with this tolerance are treated as equal.
const EXPONENT_EQ_TOL: f64 = 1e-12;

pub fn predicted_tau(c: &CoagulationParams, f: &FragmentationParams) -> TauPrediction {
    let (alpha, beta, gamma) = (c.alpha, c.beta, f.gamma);
    let eq = |a: f64, b: f64| (a - b).abs() <= EXPONENT_EQ_TOL;
    if eq(gamma, alpha) {
        if !eq(alpha, beta) {
            return TauPrediction::BalancedSum { tau: alpha + 1.0 };
        }
        return match f.daughter.kind {
            DaughterKind::PowerLaw { nu } => TauPrediction::BalancedProduct {
                tau: alpha + 2.0 / (nu + 3.0),
            },
            _ => TauPrediction::Unsupported,
        };
    }
    if gamma > alpha {
        TauPrediction::FragmentationDominant {
            tau: alpha + 1.0 + f.daughter.m_star().value,
        }
    } else {
        TauPrediction::CoagulationDominant {
            tau: c.lambda + 1.0 - gamma,
        }
    }
}
