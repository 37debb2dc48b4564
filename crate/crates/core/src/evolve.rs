//! Time marching to steady state and the ε → 0 continuation.
//!
//! Each step is a modified Patankar–Euler update written for the cell masses
//! `u_i = x_i f_i w_i`. Every mass transfer of the discrete system
//! (a coagulating pair sending mass to its product cells, a breaking
//! particle sending mass to its fragment cells) is weighted by the ratio
//! `u_src⁺ / u_src` of its source cell, which turns the update into the
//! linear system
//!
//! ```text
//! (I + dt A(f)) u⁺ = u
//! ```
//!
//! with `A` a column diagonally dominant M-matrix. The update is positive for
//! every `dt > 0`, conserves mass up to the overflow leaving the grid, and
//! its fixed points are exactly the zeros of the discrete right-hand side.

use std::sync::Arc;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoagulationParams, FragmentationParams, Truncation};
use crate::error::{domain, Error, Result};
use crate::operators::{
    apply_rhs, assemble_coagulation, assemble_fragmentation, CoagTables, DistributionState,
    FragTables,
};
use crate::sizegrid::SizeGrid;
use crate::verify::{moment, weighted_lp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    pub dt_init: f64,
    pub dt_max: f64,
    /// Factor applied to `dt` after a step that lowered the residual.
    pub growth: f64,
    pub tol_steady: f64,
    pub max_steps: usize,
    /// Relative mass drift that triggers a re-projection onto `M1 = ρ`.
    pub mass_tol: f64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            dt_init: 1e-3,
            dt_max: 1e4,
            growth: 1.25,
            tol_steady: 1e-9,
            max_steps: 200_000,
            mass_tol: 1e-10,
        }
    }
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt_init", self.dt_init),
            ("dt_max", self.dt_max),
            ("growth", self.growth),
            ("tol_steady", self.tol_steady),
            ("mass_tol", self.mass_tol),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation {
                    key: format!("evolve.{key}"),
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        if self.max_steps == 0 {
            return Err(Error::Validation {
                key: "evolve.max_steps".into(),
                reason: "must be positive".into(),
            });
        }
        if !(self.tol_steady < 1.0) {
            return Err(Error::Validation {
                key: "evolve.tol_steady".into(),
                reason: format!("must be below 1, got {}", self.tol_steady),
            });
        }
        if self.dt_init > self.dt_max {
            return Err(Error::Validation {
                key: "evolve.dt_init".into(),
                reason: "must not exceed dt_max".into(),
            });
        }
        Ok(())
    }
}

/// Accepted steps with residual below tolerance required before stopping.
pub const STEADY_STREAK: usize = 10;

/// Minimum number of steps between two mass re-projections.
pub const REPROJECTION_INTERVAL: usize = 1000;

/// Factor applied to `dt` after a step that increased the residual.
const SHRINK: f64 = 0.5;

/// One `(j, ε)` stage of a continuation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage {
    pub truncation: Truncation,
    pub evolve: Option<EvolveConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuationSchedule {
    stages: Vec<Stage>,
}

/// Default regularization levels of a continuation.
pub const DEFAULT_EPSILONS: [f64; 5] = [0.1, 0.03, 0.01, 0.003, 0.001];

impl ContinuationSchedule {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(domain("a continuation needs at least one stage"));
        }
        for w in stages.windows(2) {
            let (a, b) = (&w[0].truncation, &w[1].truncation);
            if !(b.epsilon() < a.epsilon()) {
                return Err(domain("epsilon must decrease strictly across stages"));
            }
            let (ja, jb) = (
                a.j().unwrap_or(f64::INFINITY),
                b.j().unwrap_or(f64::INFINITY),
            );
            if jb < ja {
                return Err(domain("size cap j must not decrease across stages"));
            }
        }
        Ok(Self { stages })
    }

    /// `ε ∈ {0.1, 0.03, 0.01, 0.003, 0.001}` with the cap `j` at every stage.
    pub fn default_for(j: Option<f64>) -> Result<Self> {
        let stages = DEFAULT_EPSILONS
            .iter()
            .map(|&eps| {
                Ok(Stage {
                    truncation: Truncation::new(j, eps)?,
                    evolve: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(stages)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }
}

/// Quantities recorded while marching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorSample {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub residual: f64,
    pub mass_error: f64,
    pub m2: f64,
    pub m2_gamma: f64,
}

/// Bounded history that halves its resolution whenever it fills up, so it
/// always spans the whole run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorHistory {
    capacity: usize,
    stride: usize,
    samples: Vec<MonitorSample>,
}

impl MonitorHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(4),
            stride: 1,
            samples: Vec::new(),
        }
    }

    fn record(&mut self, sample: MonitorSample) {
        if !sample.step.is_multiple_of(self.stride) {
            return;
        }
        if self.samples.len() == self.capacity {
            self.stride *= 2;
            let stride = self.stride;
            self.samples.retain(|s| s.step % stride == 0);
            if !sample.step.is_multiple_of(stride) {
                return;
            }
        }
        self.samples.push(sample);
    }

    pub fn samples(&self) -> &[MonitorSample] {
        &self.samples
    }
}

const HISTORY_CAPACITY: usize = 256;

/// Outcome of a run towards steady state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyReport {
    pub epsilon: f64,
    pub j: Option<f64>,
    pub converged: bool,
    pub residual: f64,
    pub steps: usize,
    pub time: f64,
    /// `|M1 - ρ| / ρ` at the end of the run.
    pub mass_error: f64,
    /// Overflow mass flux of the final state.
    pub overflow_flux: f64,
    /// Largest `|ΔM1 + overflow loss| / (ρ dt)` over all steps.
    pub max_mass_drift_rate: f64,
    /// Largest overflow loss per unit time relative to `ρ` over all steps.
    pub max_overflow_rate: f64,
    pub reprojections: usize,
    pub moments: Vec<(f64, f64)>,
    pub weighted_lp: Vec<(f64, f64, f64)>,
    pub history: MonitorHistory,
}

/// Moments and weighted norms reported at the end of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ReportSpec {
    pub moments: Vec<f64>,
    pub weighted_lp: Vec<(f64, f64)>,
}

/// `f_i = ρ⁻¹ e^{-x_i/ρ}`, rescaled so that the discrete mass is `ρ`.
pub fn default_initial(grid: Arc<SizeGrid>, rho: f64) -> Result<DistributionState> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(domain(format!("rho must be positive, got {rho}")));
    }
    let s = DistributionState::from_fn(grid, |x| (-x / rho).exp() / rho)?;
    let mass = s.mass();
    Ok(s.scaled(rho / mass))
}

/// Overflow loss of a step, needed for the mass bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub overflow_loss: f64,
}

/// Solves `A y = b` in place for a column diagonally dominant M-matrix
/// stored row-major. Elimination runs without pivoting, which keeps every
/// intermediate quantity sign-definite, so `b ≥ 0` yields `y ≥ 0` exactly.
fn solve_m_matrix(a: &mut [f64], b: &mut [f64], n: usize) {
    for k in 0..n {
        let pivot = a[k * n + k];
        for i in k + 1..n {
            let factor = a[i * n + k] / pivot;
            if factor == 0.0 {
                continue;
            }
            a[i * n + k] = 0.0;
            let (upper, lower) = a.split_at_mut(i * n);
            let row_k = &upper[k * n + k + 1..k * n + n];
            let row_i = &mut lower[k + 1..n];
            for (aij, akj) in row_i.iter_mut().zip(row_k) {
                *aij -= factor * akj;
            }
            b[i] -= factor * b[k];
        }
    }
    for k in (0..n).rev() {
        let mut acc = b[k];
        for j in k + 1..n {
            acc -= a[k * n + j] * b[j];
        }
        b[k] = acc / a[k * n + k];
    }
}

/// One modified Patankar–Euler step of size `dt`.
pub fn step(
    coag: &CoagTables,
    frag: &FragTables,
    s: &DistributionState,
    dt: f64,
) -> Result<(DistributionState, StepInfo)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(domain(format!("dt must be positive, got {dt}")));
    }
    let grid = coag.grid().clone();
    if s.densities().len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: s.densities().len(),
        });
    }
    let n = grid.len();
    let x = grid.pivots();
    let w = grid.widths();
    let f = s.densities();

    // a[d * n + s]: system matrix in mass variables; sink[s]: overflow coefficient.
    let mut a = vec![0.0; n * n];
    let mut sink = vec![0.0; n];
    {
        let mut transfer = |src: usize, dst: usize, coef: f64| {
            if src != dst && coef != 0.0 {
                a[src * n + src] += dt * coef;
                a[dst * n + src] -= dt * coef;
            }
        };
        for p in coag.pairs() {
            // Mass leaving cell i per unit mass in i, and likewise for j.
            let (ci, cj) = if p.i == p.j {
                (p.kernel * f[p.i] * w[p.i], 0.0)
            } else {
                (p.kernel * f[p.j] * w[p.j], p.kernel * f[p.i] * w[p.i])
            };
            if ci == 0.0 && cj == 0.0 {
                continue;
            }
            if p.overflow {
                sink[p.i] += ci;
                sink[p.j] += cj;
                continue;
            }
            let s_sum = x[p.i] + x[p.j];
            let th_lo = p.w_lo * x[p.target] / s_sum;
            let th_hi = 1.0 - th_lo;
            for (src, c) in [(p.i, ci), (p.j, cj)] {
                if c == 0.0 {
                    continue;
                }
                transfer(src, p.target, c * th_lo);
                if p.w_hi > 0.0 {
                    transfer(src, p.target + 1, c * th_hi);
                }
            }
        }
        for k in 0..n {
            let ak = frag.loss_rates()[k];
            if ak == 0.0 {
                continue;
            }
            for (i, g) in frag.column(k).iter().enumerate() {
                if *g != 0.0 {
                    transfer(k, i, ak * x[i] * g * w[i] / x[k]);
                }
            }
        }
    }
    for i in 0..n {
        a[i * n + i] += 1.0 + dt * sink[i];
    }
    let mut u: Vec<f64> = (0..n).map(|i| x[i] * f[i] * w[i]).collect();
    solve_m_matrix(&mut a, &mut u, n);
    let overflow_loss = dt * sink.iter().zip(&u).map(|(c, ui)| c * ui).sum::<f64>();
    let densities: Vec<f64> = (0..n).map(|i| (u[i] / (x[i] * w[i])).max(0.0)).collect();
    let next = DistributionState::new(grid, densities, s.time() + dt)?;
    Ok((next, StepInfo { overflow_loss }))
}

/// Scale of the two sides of the stationary balance, used to normalize the
/// residual.
fn residual_scale(s: &DistributionState, c: &CoagulationParams, f: &FragmentationParams) -> f64 {
    let frag = f.a0() * moment(s, 1.0 + f.gamma());
    let coag_half = moment(s, 0.5 * (1.0 + c.lambda()));
    frag + c.k0() * coag_half * coag_half
}

/// Scale-free stationarity residual `‖rhs‖_{X1} / scale`.
pub fn steady_residual(
    coag: &CoagTables,
    frag: &FragTables,
    s: &DistributionState,
    c: &CoagulationParams,
    f: &FragmentationParams,
) -> Result<f64> {
    let (rate, _) = apply_rhs(coag, frag, s)?;
    let grid = s.grid();
    let num: f64 = grid
        .pivots()
        .iter()
        .zip(grid.widths())
        .zip(&rate)
        .map(|((x, w), r)| x * r.abs() * w)
        .sum();
    let den = residual_scale(s, c, f);
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Precomputed operators for one `(j, ε)`.
pub struct Problem {
    pub coag_params: CoagulationParams,
    pub frag_params: FragmentationParams,
    pub truncation: Truncation,
    pub coag: CoagTables,
    pub frag: FragTables,
}

impl Problem {
    pub fn new(
        grid: Arc<SizeGrid>,
        c: &CoagulationParams,
        f: &FragmentationParams,
        t: Truncation,
    ) -> Result<Self> {
        if !c.is_admissible() {
            return Err(domain(format!(
                "alpha+beta must lie in [0,1), got {}",
                c.lambda()
            )));
        }
        Ok(Self {
            coag: assemble_coagulation(grid.clone(), c, &t),
            frag: assemble_fragmentation(grid, f, &t)?,
            coag_params: *c,
            frag_params: f.clone(),
            truncation: t,
        })
    }
}

pub fn run_to_steady(
    problem: &Problem,
    s0: &DistributionState,
    rho: f64,
    cfg: &EvolveConfig,
    spec: &ReportSpec,
) -> Result<(DistributionState, SteadyReport)> {
    cfg.validate()?;
    let (c, fp) = (&problem.coag_params, &problem.frag_params);
    let gamma = fp.gamma();
    let mut state = s0.clone();
    let mut history = MonitorHistory::new(HISTORY_CAPACITY);
    let mut residual = steady_residual(&problem.coag, &problem.frag, &state, c, fp)?;
    let mut streak = usize::from(residual <= cfg.tol_steady);
    let mut dt = cfg.dt_init;
    let mut steps = 0;
    let mut since_projection = 0;
    let mut reprojections = 0;
    let mut max_drift: f64 = 0.0;
    let mut max_overflow: f64 = 0.0;
    history.record(sample(0, &state, dt, residual, rho, gamma));
    while streak < STEADY_STREAK && steps < cfg.max_steps {
        let before = state.mass();
        let (next, info) = step(&problem.coag, &problem.frag, &state, dt)?;
        steps += 1;
        since_projection += 1;
        let after = next.mass();
        max_drift = max_drift.max((after - before + info.overflow_loss).abs() / (rho * dt));
        max_overflow = max_overflow.max(info.overflow_loss / (rho * dt));
        state = next;
        if (after - rho).abs() > cfg.mass_tol * rho && since_projection >= REPROJECTION_INTERVAL {
            state = state.scaled(rho / after);
            reprojections += 1;
            since_projection = 0;
            debug!(
                "mass re-projection at step {steps}: drift {:.3e}",
                (after - rho) / rho
            );
        }
        let new_residual = steady_residual(&problem.coag, &problem.frag, &state, c, fp)?;
        dt = if new_residual <= residual {
            (dt * cfg.growth).min(cfg.dt_max)
        } else {
            (dt * SHRINK).max(cfg.dt_init)
        };
        residual = new_residual;
        streak = if residual <= cfg.tol_steady {
            streak + 1
        } else {
            0
        };
        history.record(sample(steps, &state, dt, residual, rho, gamma));
        if steps % 1000 == 0 {
            info!(
                "step {steps} t={:.4e} dt={dt:.3e} residual={residual:.3e} mass_error={:.3e}",
                state.time(),
                (state.mass() - rho) / rho
            );
        }
    }
    let (_, diag) = apply_rhs(&problem.coag, &problem.frag, &state)?;
    let report = SteadyReport {
        epsilon: problem.truncation.epsilon(),
        j: problem.truncation.j(),
        converged: streak >= STEADY_STREAK && residual <= cfg.tol_steady,
        residual,
        steps,
        time: state.time(),
        mass_error: (state.mass() - rho).abs() / rho,
        overflow_flux: diag.overflow_flux,
        max_mass_drift_rate: max_drift,
        max_overflow_rate: max_overflow,
        reprojections,
        moments: spec
            .moments
            .iter()
            .map(|&m| (m, moment(&state, m)))
            .collect(),
        weighted_lp: spec
            .weighted_lp
            .iter()
            .map(|&(m, p)| (m, p, weighted_lp(&state, m, p)))
            .collect(),
        history,
    };
    info!(
        "stage eps={} finished: converged={} steps={} residual={:.3e}",
        report.epsilon, report.converged, report.steps, report.residual
    );
    Ok((state, report))
}

fn sample(
    step: usize,
    s: &DistributionState,
    dt: f64,
    residual: f64,
    rho: f64,
    gamma: f64,
) -> MonitorSample {
    MonitorSample {
        step,
        time: s.time(),
        dt,
        residual,
        mass_error: (s.mass() - rho) / rho,
        m2: moment(s, 2.0),
        m2_gamma: moment(s, 2.0 + gamma),
    }
}

/// Runs every stage of `schedule`, warm-starting each from the previous one.
#[allow(clippy::too_many_arguments)]
pub fn continuation_run(
    grid: Arc<SizeGrid>,
    c: &CoagulationParams,
    f: &FragmentationParams,
    schedule: &ContinuationSchedule,
    rho: f64,
    base: &EvolveConfig,
    spec: &ReportSpec,
    initial: Option<DistributionState>,
) -> Result<(DistributionState, Vec<SteadyReport>)> {
    let mut state = match initial {
        Some(s) => s,
        None => default_initial(grid.clone(), rho)?,
    };
    let mut reports = Vec::with_capacity(schedule.stages().len());
    for stage in schedule.stages() {
        let problem = Problem::new(grid.clone(), c, f, stage.truncation)?;
        let cfg = stage.evolve.unwrap_or(*base);
        let (next, report) = run_to_steady(&problem, &state, rho, &cfg, spec)?;
        state = next;
        reports.push(report);
    }
    Ok((state, reports))
}

/// Upper bound on `ε` for which negative moments stay controlled:
/// `(1/σ) min{1, K0 ρ² / (4 a0 𝔟_{m0})}`.
pub fn epsilon_threshold(
    m0: f64,
    sigma: f64,
    c: &CoagulationParams,
    f: &FragmentationParams,
    rho: f64,
) -> Result<f64> {
    let ms = f.daughter().m_star().value;
    if !(m0 > ms && m0 < 0.0) {
        return Err(domain(format!("m0 must lie in (m_star={ms}, 0), got {m0}")));
    }
    if !(sigma > 0.0) {
        return Err(domain(format!("sigma must be positive, got {sigma}")));
    }
    let b = f.daughter().frak_b(m0)?;
    Ok((1.0f64).min(c.k0() * rho * rho / (4.0 * f.a0() * b)) / sigma)
}
