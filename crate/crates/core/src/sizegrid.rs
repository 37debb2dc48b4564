//! Geometric discretization of the size axis.
//!
//! Cells are half-open intervals `[edges[i], edges[i+1])` whose edges grow by
//! a constant ratio. Each cell carries a pivot (the geometric mean of its
//! edges) at which densities and coefficients are sampled, and a width used
//! as the quadrature weight.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// A geometric grid on `[x_min, x_max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeGrid {
    x_min: f64,
    x_max: f64,
    ratio: f64,
    edges: Vec<f64>,
    pivots: Vec<f64>,
    widths: Vec<f64>,
}

/// Result of [`SizeGrid::locate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellLocation {
    Below,
    Inside(usize),
    Above,
}

impl SizeGrid {
    /// Builds a grid of `n_cells` cells with constant edge ratio.
    pub fn geometric(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        if !(x_min > 0.0 && x_min.is_finite()) {
            return Err(domain(format!("x_min must be positive, got {x_min}")));
        }
        if !(x_max > x_min && x_max.is_finite()) {
            return Err(domain(format!(
                "x_max must exceed x_min, got x_min={x_min}, x_max={x_max}"
            )));
        }
        if n_cells < 2 {
            return Err(domain(format!(
                "at least two cells required, got {n_cells}"
            )));
        }
        let n = n_cells as f64;
        let log_span = (x_max / x_min).ln();
        let ratio = (log_span / n).exp();
        // Edges from exponentials of evenly spaced logs, pinned at both ends.
        let mut edges: Vec<f64> = (0..=n_cells)
            .map(|i| x_min * (log_span * i as f64 / n).exp())
            .collect();
        edges[0] = x_min;
        edges[n_cells] = x_max;
        let pivots = edges.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
        let widths = edges.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self {
            x_min,
            x_max,
            ratio,
            edges,
            pivots,
            widths,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn len(&self) -> usize {
        self.pivots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivots.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn pivots(&self) -> &[f64] {
        &self.pivots
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Finds the cell containing `x` under the half-open convention.
    pub fn locate(&self, x: f64) -> Result<CellLocation> {
        if !(x > 0.0) {
            return Err(domain(format!("size must be positive, got {x}")));
        }
        if x < self.x_min {
            return Ok(CellLocation::Below);
        }
        if x >= self.x_max {
            return Ok(CellLocation::Above);
        }
        // partition_point gives the first edge strictly greater than x.
        let upper = self.edges.partition_point(|&e| e <= x);
        Ok(CellLocation::Inside(upper - 1))
    }

    /// Sum of `g(pivot_i) * width_i` over all cells.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.widths).map(|(v, w)| v * w).sum()
    }
}
