use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|Σ probs - 1|` after construction.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// A density discretized on a regular box grid.
///
/// Cells are indexed row-major over the axes. `density` holds the point
/// values the grid was built from; `probs` are the normalized cell masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    cells: Vec<usize>,
    density: Vec<f64>,
    probs: Vec<f64>,
}

impl DensityGrid {
    /// Samples `f` at the cell centers and normalizes `f·volume` to sum 1.
    pub fn from_density(
        lower: &[f64],
        upper: &[f64],
        cells: &[usize],
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        Self::check_geometry(lower, upper, cells)?;
        let mut grid = DensityGrid {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            cells: cells.to_vec(),
            density: Vec::new(),
            probs: Vec::new(),
        };
        grid.density = grid.centers().iter().map(|c| f(c)).collect();
        grid.normalize()?;
        Ok(grid)
    }

    /// 1-D grid from raw nonnegative cell weights.
    pub fn from_weights_1d(lower: f64, upper: f64, weights: &[f64]) -> Result<Self> {
        Self::check_geometry(&[lower], &[upper], &[weights.len()])?;
        let vol = (upper - lower) / weights.len() as f64;
        let mut grid = DensityGrid {
            lower: vec![lower],
            upper: vec![upper],
            cells: vec![weights.len()],
            density: weights.iter().map(|w| w / vol).collect(),
            probs: Vec::new(),
        };
        grid.normalize()?;
        Ok(grid)
    }

    fn check_geometry(lower: &[f64], upper: &[f64], cells: &[usize]) -> Result<()> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != cells.len() {
            return Err(Error::GridMismatch("bounds and cell counts must share one dimension".into()));
        }
        if cells.contains(&0) {
            return Err(Error::GridMismatch("every axis needs at least one cell".into()));
        }
        if lower.iter().zip(upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && u > l)) {
            return Err(Error::GridMismatch("box bounds must be finite with upper > lower".into()));
        }
        Ok(())
    }

    fn normalize(&mut self) -> Result<()> {
        if self.density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::GridMismatch("density values must be finite and >= 0".into()));
        }
        let vol = self.cell_volume();
        let mass: Vec<f64> = self.density.iter().map(|d| d * vol).collect();
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::NotNormalized { sum: total });
        }
        self.probs = mass.iter().map(|m| m / total).collect();
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { sum });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn cell_widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(&self.cells)
            .map(|((l, u), &c)| (u - l) / c as f64)
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_widths().iter().product()
    }

    /// Cell centers in row-major cell order.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let widths = self.cell_widths();
        let total: usize = self.cells.iter().product();
        (0..total)
            .map(|mut idx| {
                let mut c = vec![0.0; self.dim()];
                for axis in (0..self.dim()).rev() {
                    let k = idx % self.cells[axis];
                    idx /= self.cells[axis];
                    c[axis] = self.lower[axis] + (k as f64 + 0.5) * widths[axis];
                }
                c
            })
            .collect()
    }

    /// Grid of `y = s·x`: box scaled by `s`, density `p(y/s)/s^d`.
    pub fn pushforward(&self, s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::GridMismatch(format!("scale must be positive, got {s}")));
        }
        let jac = s.powi(self.dim() as i32);
        let mut grid = DensityGrid {
            lower: self.lower.iter().map(|v| v * s).collect(),
            upper: self.upper.iter().map(|v| v * s).collect(),
            cells: self.cells.clone(),
            density: self.density.iter().map(|d| d / jac).collect(),
            probs: Vec::new(),
        };
        grid.normalize()?;
        Ok(grid)
    }

    pub fn same_geometry(&self, other: &DensityGrid) -> bool {
        let close = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0))
        };
        self.cells == other.cells && close(&self.lower, &other.lower) && close(&self.upper, &other.upper)
    }
}
