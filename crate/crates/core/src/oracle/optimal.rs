//! Optimal regularized discriminator on a density grid.
//!
//! For fixed `c`, each cell solves the cubic for `z_c(r)` with `r = q/p0`.
//! The common mean `c = E_{p0}[D]` is then the root of
//! `h(c) = E_{p0}[z_c] − c`, bracketed by `h(0) > 0 > h(1)`.

use serde::{Deserialize, Serialize};

use super::cubic::{cubic, solve_inner_root};
use super::grid::DensityGrid;
use crate::augmentation::ScalingSchedule;
use crate::error::{Error, Result};

/// Target residual for the outer fixed point.
pub const OUTER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    /// Optimal `D` per cell.
    pub d: Vec<f64>,
    /// Fixed point `c = E_{p0}[D]`.
    pub c: f64,
    pub lambda: f64,
    /// `|h(c)|` at the returned `c`.
    pub fixed_point_residual: f64,
    /// `max_cell |f(D, c)|`.
    pub cubic_residual: f64,
}

/// Cellwise density ratios `q/p0`; both grids must be positive everywhere.
pub fn ratios(p0: &DensityGrid, q: &DensityGrid) -> Result<Vec<f64>> {
    if p0.cells() != q.cells() {
        return Err(Error::GridMismatch(format!("{:?} vs {:?} cells", p0.cells(), q.cells())));
    }
    if !p0.same_geometry(q) {
        return Err(Error::GridMismatch("grids cover different boxes".into()));
    }
    p0.probs()
        .iter()
        .zip(q.probs())
        .map(|(&p, &qq)| {
            if p > 0.0 && qq > 0.0 {
                Ok(qq / p)
            } else {
                Err(Error::GridMismatch("densities must be strictly positive on the shared support".into()))
            }
        })
        .collect()
}

/// `h(c) = Σ_i p_i z_c(r_i) − c`.
pub fn fixed_point_gap(p: &[f64], r: &[f64], c: f64, lambda: f64) -> f64 {
    p.iter()
        .zip(r)
        .map(|(&pi, &ri)| pi * solve_inner_root(ri, c, lambda))
        .sum::<f64>()
        - c
}

/// Solves directly from cell masses and ratios.
pub fn solve_from_ratios(p: &[f64], r: &[f64], lambda: f64) -> OracleSolution {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = (f64::INFINITY, 0.5);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let h = fixed_point_gap(p, r, mid, lambda);
        if h.abs() < best.0 {
            best = (h.abs(), mid);
        }
        if h == 0.0 {
            break;
        }
        if h > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = best.1;
    let d: Vec<f64> = r.iter().map(|&ri| solve_inner_root(ri, c, lambda)).collect();
    let cubic_residual = d
        .iter()
        .zip(r)
        .map(|(&z, &ri)| cubic(z, c, ri, lambda).abs())
        .fold(0.0, f64::max);
    OracleSolution {
        d,
        c,
        lambda,
        fixed_point_residual: best.0,
        cubic_residual,
    }
}

pub fn solve_optimal_discriminator(p0: &DensityGrid, q: &DensityGrid, lambda: f64) -> Result<OracleSolution> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::config("lambda", "must be finite and >= 0"));
    }
    let r = ratios(p0, q)?;
    Ok(solve_from_ratios(p0.probs(), &r, lambda))
}

/// Solves at each intensity on the pushed-forward grids `p_t`, `q_t` and
/// returns `max_{t, cell} |D_t(s_t x) − D_0(x)|`.
pub fn verify_scale_invariance(
    p0: &DensityGrid,
    q: &DensityGrid,
    schedule: &ScalingSchedule,
    lambda: f64,
    t_list: &[usize],
) -> Result<f64> {
    let base = solve_optimal_discriminator(p0, q, lambda)?;
    let mut worst = 0.0f64;
    for &t in t_list {
        let s = schedule.s(t)?;
        let (pt, qt) = (p0.pushforward(s)?, q.pushforward(s)?);
        let sol = solve_optimal_discriminator(&pt, &qt, lambda)?;
        for (a, b) in sol.d.iter().zip(&base.d) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Deviation of the regularized optimum from the vanilla `p0/(p0+q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasBounds {
    /// `‖D − p0/(p0+q)‖_∞`.
    pub sup_deviation: f64,
    /// `4λ((1−δ)/δ)²`.
    pub upper_bound: f64,
    /// `max_cell (p0/(p0+q) − 4λ − D)`; nonpositive when the lower bound holds.
    pub lower_violation: f64,
    /// `max_cell (D − p0/(p0+q) − 4λ r²)`; nonpositive when the cellwise upper bound holds.
    pub cellwise_upper_violation: f64,
}

pub fn bias_bound(delta: f64, lambda: f64) -> f64 {
    4.0 * lambda * ((1.0 - delta) / delta).powi(2)
}

/// `λ_δ = δ³/10`.
pub fn lambda_delta(delta: f64) -> f64 {
    delta.powi(3) / 10.0
}

pub fn check_bias_bounds(p0: &DensityGrid, q: &DensityGrid, lambda: f64, delta: f64) -> Result<BiasBounds> {
    let r = ratios(p0, q)?;
    let sol = solve_from_ratios(p0.probs(), &r, lambda);
    let mut out = BiasBounds {
        sup_deviation: 0.0,
        upper_bound: bias_bound(delta, lambda),
        lower_violation: f64::NEG_INFINITY,
        cellwise_upper_violation: f64::NEG_INFINITY,
    };
    for (&d, &ri) in sol.d.iter().zip(&r) {
        let vanilla = 1.0 / (1.0 + ri);
        out.sup_deviation = out.sup_deviation.max((d - vanilla).abs());
        out.lower_violation = out.lower_violation.max(vanilla - 4.0 * lambda - d);
        out.cellwise_upper_violation = out.cellwise_upper_violation.max(d - vanilla - 4.0 * lambda * ri * ri);
    }
    Ok(out)
}
