//! Discrete coagulation and fragmentation operators.
//!
//! Densities live on the pivots of a [`SizeGrid`]; `f[i] * width[i]` is the
//! number of particles in cell `i`. Coagulation uses the fixed-pivot
//! technique: the product of a pair `(i, j)` has size `s = x_i + x_j` and is
//! shared between the two pivots bracketing `s` so that both number and mass
//! are preserved. Products beyond the last pivot leave the domain and are
//! reported as an overflow mass flux.
//!
//! Fragmentation redistributes broken particles of cell `k` over cells
//! `i ≤ k` with weights obtained by integrating the daughter distribution
//! over each cell; the columns are then rescaled so that breakage conserves
//! mass exactly on the grid.

use std::sync::Arc;

use serde::Serialize;

use crate::coefficients::{CoagulationParams, FragmentationParams, Truncation};
use crate::error::{Error, Result};
use crate::quad;
use crate::sizegrid::SizeGrid;

/// Number density on a grid at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionState {
    grid: Arc<SizeGrid>,
    densities: Vec<f64>,
    time: f64,
}

impl DistributionState {
    pub fn new(grid: Arc<SizeGrid>, densities: Vec<f64>, time: f64) -> Result<Self> {
        if densities.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: densities.len(),
            });
        }
        if let Some(bad) = densities.iter().find(|f| !(**f >= 0.0 && f.is_finite())) {
            return Err(Error::Domain(format!(
                "densities must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(Self {
            grid,
            densities,
            time,
        })
    }

    pub fn zeros(grid: Arc<SizeGrid>) -> Self {
        let n = grid.len();
        Self {
            grid,
            densities: vec![0.0; n],
            time: 0.0,
        }
    }

    /// Samples `f` at the pivots.
    pub fn from_fn(grid: Arc<SizeGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let densities = grid.pivots().iter().map(|&x| f(x)).collect();
        Self::new(grid, densities, 0.0)
    }

    pub fn grid(&self) -> &Arc<SizeGrid> {
        &self.grid
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Total mass `Σ x_i f_i w_i`.
    pub fn mass(&self) -> f64 {
        weighted_sum(&self.grid, &self.densities, |x| x)
    }

    /// Multiplies every density by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            densities: self.densities.iter().map(|f| f * factor).collect(),
            time: self.time,
        }
    }
}

/// `Σ g(x_i) v_i w_i` in a fixed summation order.
pub(crate) fn weighted_sum(grid: &SizeGrid, values: &[f64], g: impl Fn(f64) -> f64) -> f64 {
    grid.pivots()
        .iter()
        .zip(grid.widths())
        .zip(values)
        .map(|((&x, &w), &v)| g(x) * v * w)
        .sum()
}

/// One unordered pair of cells `(i, j)`, `i ≤ j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoagPair {
    pub i: usize,
    pub j: usize,
    pub kernel: f64,
    /// Lower target cell; the product is shared with `target + 1`.
    pub target: usize,
    pub w_lo: f64,
    pub w_hi: f64,
    pub overflow: bool,
}

/// Precomputed coagulation interactions.
#[derive(Debug, Clone)]
pub struct CoagTables {
    grid: Arc<SizeGrid>,
    pairs: Vec<CoagPair>,
}

impl CoagTables {
    pub fn grid(&self) -> &Arc<SizeGrid> {
        &self.grid
    }

    pub fn pairs(&self) -> &[CoagPair] {
        &self.pairs
    }
}

/// Splits a product of size `s` between the pivots bracketing it.
///
/// Returns `None` when `s` exceeds the last pivot.
pub(crate) fn split_product(pivots: &[f64], s: f64) -> Option<(usize, f64, f64)> {
    const HIT_TOL: f64 = 1e-12;
    let n = pivots.len();
    let last = pivots[n - 1];
    if s > last * (1.0 + HIT_TOL) {
        return None;
    }
    // First pivot strictly above s, minus one: pivots[k] <= s < pivots[k+1].
    let mut k = pivots.partition_point(|&p| p <= s).saturating_sub(1);
    // Sums landing on a pivot up to rounding go entirely to that pivot.
    if k + 1 < n && pivots[k + 1] - s <= HIT_TOL * s {
        k += 1;
    }
    if k + 1 == n || (s - pivots[k]).abs() <= HIT_TOL * s {
        return Some((k, 1.0, 0.0));
    }
    let w_hi = (s - pivots[k]) / (pivots[k + 1] - pivots[k]);
    Some((k, 1.0 - w_hi, w_hi))
}

pub fn assemble_coagulation(
    grid: Arc<SizeGrid>,
    c: &CoagulationParams,
    t: &Truncation,
) -> CoagTables {
    let x = grid.pivots();
    let n = x.len();
    let mut pairs = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let kernel = c.kernel_truncated_unchecked(t, x[i], x[j]);
            let pair = match split_product(x, x[i] + x[j]) {
                Some((target, w_lo, w_hi)) => CoagPair {
                    i,
                    j,
                    kernel,
                    target,
                    w_lo,
                    w_hi,
                    overflow: false,
                },
                None => CoagPair {
                    i,
                    j,
                    kernel,
                    target: n - 1,
                    w_lo: 0.0,
                    w_hi: 0.0,
                    overflow: true,
                },
            };
            pairs.push(pair);
        }
    }
    CoagTables { grid, pairs }
}

/// Number of merging events per unit time for a pair.
#[inline]
pub(crate) fn pair_event_rate(p: &CoagPair, f: &[f64], w: &[f64]) -> f64 {
    let r = p.kernel * f[p.i] * f[p.j] * w[p.i] * w[p.j];
    if p.i == p.j {
        0.5 * r
    } else {
        r
    }
}

fn check_len(grid: &SizeGrid, s: &DistributionState) -> Result<()> {
    if s.densities.len() != grid.len() || s.grid.as_ref() != grid {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: s.densities.len(),
        });
    }
    Ok(())
}

/// Coagulation rate of change per cell and the overflow mass flux.
pub fn apply_coagulation(tables: &CoagTables, s: &DistributionState) -> Result<(Vec<f64>, f64)> {
    check_len(&tables.grid, s)?;
    let x = tables.grid.pivots();
    let w = tables.grid.widths();
    let f = &s.densities;
    let mut rate = vec![0.0; x.len()];
    let mut overflow = 0.0;
    for p in &tables.pairs {
        let r = pair_event_rate(p, f, w);
        if r == 0.0 {
            continue;
        }
        rate[p.i] -= r / w[p.i];
        rate[p.j] -= r / w[p.j];
        if p.overflow {
            overflow += (x[p.i] + x[p.j]) * r;
        } else {
            rate[p.target] += p.w_lo * r / w[p.target];
            if p.w_hi > 0.0 {
                rate[p.target + 1] += p.w_hi * r / w[p.target + 1];
            }
        }
    }
    Ok((rate, overflow))
}

/// Precomputed fragmentation loss rates and redistribution matrix.
#[derive(Debug, Clone)]
pub struct FragTables {
    grid: Arc<SizeGrid>,
    loss: Vec<f64>,
    /// Column-major: `gain[k][i]` is the density added to cell `i` per
    /// particle broken in cell `k`.
    gain: Vec<Vec<f64>>,
    defect: Vec<f64>,
}

impl FragTables {
    pub fn grid(&self) -> &Arc<SizeGrid> {
        &self.grid
    }

    /// `a_{j,ε}(x_k)` per cell.
    pub fn loss_rates(&self) -> &[f64] {
        &self.loss
    }

    /// Redistribution entry `G[i][k]`.
    pub fn redistribution(&self, i: usize, k: usize) -> f64 {
        self.gain[k].get(i).copied().unwrap_or(0.0)
    }

    /// Column `k` of the redistribution matrix, indices `0..=k`.
    pub fn column(&self, k: usize) -> &[f64] {
        &self.gain[k]
    }

    /// Relative mass lost below `x_min` (or gained by pivot placement)
    /// before renormalization.
    pub fn defects(&self) -> &[f64] {
        &self.defect
    }
}

/// Largest tolerated `|d[k]|` outside the boundary layer.
pub const MAX_FRAGMENT_DEFECT: f64 = 0.2;

/// Cells whose pivot lies below this multiple of `x_min` form the boundary
/// layer, where most daughters of a breakage necessarily fall below the grid.
pub const DEFECT_BOUNDARY_FACTOR: f64 = 10.0;

pub fn assemble_fragmentation(
    grid: Arc<SizeGrid>,
    f: &FragmentationParams,
    t: &Truncation,
) -> Result<FragTables> {
    let x = grid.pivots();
    let e = grid.edges();
    let w = grid.widths();
    let n = x.len();
    let daughter = f.daughter();
    let loss: Vec<f64> = x
        .iter()
        .map(|&xk| f.rate_truncated_unchecked(t, xk))
        .collect();
    let mut gain = Vec::with_capacity(n);
    let mut defect = Vec::with_capacity(n);
    for k in 0..n {
        let mut col = Vec::with_capacity(k + 1);
        for i in 0..=k {
            let hi = if i == k { x[k] } else { e[i + 1] };
            // ∫ B(x/x_k)/x_k dx over the cell, as ∫ B(z) dz in log z.
            let number =
                quad::gauss_legendre_log(e[i] / x[k], hi / x[k], |z| daughter.eval_unchecked(z));
            col.push(number / w[i]);
        }
        let captured: f64 = col.iter().enumerate().map(|(i, g)| x[i] * g * w[i]).sum();
        let d = 1.0 - captured / x[k];
        if captured > 0.0 && captured.is_finite() {
            let scale = x[k] / captured;
            col.iter_mut().for_each(|g| *g *= scale);
        } else {
            col.iter_mut().for_each(|g| *g = 0.0);
            col[k] = 1.0 / w[k];
        }
        if x[k] >= DEFECT_BOUNDARY_FACTOR * grid.x_min() && d.abs() > MAX_FRAGMENT_DEFECT {
            return Err(Error::Configuration(format!(
                "grid does not resolve the daughter distribution: cell {k} (x={:.6e}) has mass defect {d:.3}",
                x[k]
            )));
        }
        gain.push(col);
        defect.push(d);
    }
    Ok(FragTables {
        grid,
        loss,
        gain,
        defect,
    })
}

pub fn apply_fragmentation(tables: &FragTables, s: &DistributionState) -> Result<Vec<f64>> {
    check_len(&tables.grid, s)?;
    let w = tables.grid.widths();
    let f = &s.densities;
    let mut rate: Vec<f64> = tables.loss.iter().zip(f).map(|(a, fi)| -a * fi).collect();
    for (k, col) in tables.gain.iter().enumerate() {
        let broken = tables.loss[k] * f[k] * w[k];
        if broken == 0.0 {
            continue;
        }
        for (r, g) in rate.iter_mut().zip(col) {
            *r += g * broken;
        }
    }
    Ok(rate)
}

/// Bookkeeping returned with the combined right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhsDiagnostics {
    /// Mass per unit time carried out of the grid by coagulation.
    pub overflow_flux: f64,
    /// `d M1 / dt` of the discrete system.
    pub mass_rate: f64,
}

pub fn apply_rhs(
    coag: &CoagTables,
    frag: &FragTables,
    s: &DistributionState,
) -> Result<(Vec<f64>, RhsDiagnostics)> {
    if coag.grid != frag.grid && coag.grid.as_ref() != frag.grid.as_ref() {
        return Err(Error::GridMismatch(
            "coagulation and fragmentation tables use different grids".into(),
        ));
    }
    let (mut rate, overflow_flux) = apply_coagulation(coag, s)?;
    let fr = apply_fragmentation(frag, s)?;
    rate.iter_mut().zip(&fr).for_each(|(r, g)| *r += g);
    let mass_rate = weighted_sum(&coag.grid, &rate, |x| x);
    Ok((
        rate,
        RhsDiagnostics {
            overflow_flux,
            mass_rate,
        },
    ))
}
