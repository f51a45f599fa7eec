//! Generator-side optimum `q_λ = argmin_q max_D F(q, D; λ)` on a grid, by
//! projected subgradient descent over the probability simplex.

use serde::{Deserialize, Serialize};

use super::grid::DensityGrid;
use super::optimal::solve_from_ratios;
use crate::error::{Error, Result};
use crate::metrics::js_on_grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QLambdaOptions {
    pub steps: usize,
    /// Step size at iteration k is `step0 / sqrt(k)`.
    pub step0: f64,
    /// Lower bound kept on every cell mass so ratios stay finite.
    pub floor: f64,
}

impl Default for QLambdaOptions {
    fn default() -> Self {
        QLambdaOptions {
            steps: 10_000,
            step0: 0.05,
            floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QLambdaReport {
    pub q: Vec<f64>,
    pub lambda: f64,
    /// Frank–Wolfe gap `Σ q_i g_i − min_i g_i` at the final iterate.
    pub gap: f64,
    /// `max_i |q_i − p0_i|` in cell mass.
    pub sup_deviation: f64,
    pub js: f64,
    /// `G(q, λ)` at the final iterate.
    pub value: f64,
}

/// Euclidean projection onto `{x : Σx = total, x ≥ 0}` (sort-and-threshold).
pub fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - total) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Projection onto `{x : Σx = 1, x ≥ floor}`.
fn project_floored(v: &[f64], floor: f64) -> Vec<f64> {
    let n = v.len() as f64;
    let shifted: Vec<f64> = v.iter().map(|x| x - floor).collect();
    project_simplex(&shifted, 1.0 - n * floor)
        .into_iter()
        .map(|x| x + floor)
        .collect()
}

/// `G(q, λ)` and its Danskin gradient `log(1 − D*)`.
pub fn regularized_value(p: &[f64], q: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let r: Vec<f64> = p.iter().zip(q).map(|(pi, qi)| qi / pi).collect();
    let sol = solve_from_ratios(p, &r, lambda);
    let grad: Vec<f64> = sol.d.iter().map(|d| (1.0 - d).ln()).collect();
    let mean: f64 = p.iter().zip(&sol.d).map(|(pi, d)| pi * d).sum();
    let var: f64 = p.iter().zip(&sol.d).map(|(pi, d)| pi * (d - mean).powi(2)).sum();
    let value = p.iter().zip(&sol.d).map(|(pi, d)| pi * d.ln()).sum::<f64>()
        + q.iter().zip(&grad).map(|(qi, g)| qi * g).sum::<f64>()
        - lambda * var;
    (value, grad)
}

pub fn solve_q_lambda(p0: &DensityGrid, lambda: f64, opts: QLambdaOptions) -> Result<QLambdaReport> {
    let p = p0.probs();
    let n = p.len();
    if n == 0 {
        return Err(Error::EmptyBatch("solve_q_lambda"));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::config("lambda", "must be finite and >= 0"));
    }
    if p.iter().any(|&pi| pi <= 0.0) {
        return Err(Error::GridMismatch("p0 must be strictly positive".into()));
    }
    if !(opts.floor >= 0.0 && opts.floor * n as f64 <= 1.0) || opts.floor == 0.0 {
        return Err(Error::config("floor", "must be positive and leave mass to distribute"));
    }
    let mut q = vec![1.0 / n as f64; n];
    for k in 1..=opts.steps {
        let (_, grad) = regularized_value(p, &q, lambda);
        let eta = opts.step0 / (k as f64).sqrt();
        let stepped: Vec<f64> = q.iter().zip(&grad).map(|(qi, g)| qi - eta * g).collect();
        q = project_floored(&stepped, opts.floor);
    }
    let (value, grad) = regularized_value(p, &q, lambda);
    let min_g = grad.iter().copied().fold(f64::INFINITY, f64::min);
    let gap = q.iter().zip(&grad).map(|(qi, g)| qi * g).sum::<f64>() - min_g;
    // renormalize against round-off drift before the JS check
    let total: f64 = q.iter().sum();
    let q: Vec<f64> = q.iter().map(|x| x / total).collect();
    let sup_deviation = q.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let js = js_on_grid(p, &q)?;
    Ok(QLambdaReport {
        q,
        lambda,
        gap,
        sup_deviation,
        js,
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5], 1.0), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0], 1.0), vec![1.0, 0.0]);
        let p = project_simplex(&[0.5, 0.5, 0.5], 1.0);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let f = project_floored(&[3.0, -1.0, 0.0], 0.01);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(f.iter().all(|&x| x >= 0.01 - 1e-18));
    }

    #[test]
    fn uniform_p0_is_a_fixed_point() {
        let p0 = DensityGrid::from_weights_1d(0.0, 1.0, &[1.0; 16]).unwrap();
        for lambda in [0.0, 0.01, 0.1] {
            let rep = solve_q_lambda(&p0, lambda, QLambdaOptions { steps: 50, ..Default::default() }).unwrap();
            assert!(rep.sup_deviation < 1e-15, "{}", rep.sup_deviation);
        }
    }

    #[test]
    fn value_at_p0_is_minus_two_log_two() {
        let w: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        let p0 = DensityGrid::from_weights_1d(0.0, 1.0, &w).unwrap();
        let (v, g) = regularized_value(p0.probs(), p0.probs(), 0.1);
        assert!((v + 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(g.iter().all(|gi| (gi - 0.5f64.ln()).abs() < 1e-12));
    }
}
