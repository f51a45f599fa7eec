//! Diagnostics: mode-radius precision/recall, discriminator input-gradient
//! norms, the gradient-direction cosine diagnostic and grid JS divergence.

use rand::Rng;

use crate::augmentation::{ScalingSchedule, Transform};
use crate::error::{Error, Result};
use crate::models::Critic;
use crate::tensor::Tensor;

/// Gradient pairs with either norm below this are skipped.
pub const COSINE_MIN_NORM: f64 = 1e-12;

/// Precision: share of samples within `threshold_mult·sigma` of some mode.
/// Recall: share of modes with at least one such sample.
pub fn precision_recall(
    samples: &Tensor,
    modes: &[[f64; 2]],
    sigma: f64,
    threshold_mult: f64,
) -> Result<(f64, f64)> {
    let m = samples.rows();
    if m == 0 {
        return Err(Error::EmptyBatch("precision_recall"));
    }
    if samples.cols() != 2 {
        return Err(Error::shape("precision_recall", format!("expected 2 columns, got {}", samples.cols())));
    }
    let r2 = (threshold_mult * sigma).powi(2);
    let mut covered = vec![false; modes.len()];
    let mut hits = 0usize;
    for i in 0..m {
        let p = samples.row(i);
        let mut near = false;
        for (k, mu) in modes.iter().enumerate() {
            if (p[0] - mu[0]).powi(2) + (p[1] - mu[1]).powi(2) <= r2 {
                covered[k] = true;
                near = true;
            }
        }
        hits += near as usize;
    }
    let recall = covered.iter().filter(|&&c| c).count() as f64 / modes.len().max(1) as f64;
    Ok((hits as f64 / m as f64, recall))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean over the batch of `‖∇_y D̃(y_i, t_i)‖₂`.
pub fn disc_grad_norm(critic: &dyn Critic, points: &Tensor, t: &[usize]) -> Result<f64> {
    if points.rows() == 0 {
        return Ok(0.0);
    }
    let grads = critic.input_gradients(points, t)?;
    let total: f64 = (0..grads.rows()).map(|i| norm(grads.row(i))).sum();
    Ok(total / grads.rows() as f64)
}

/// Cosine of the angle between two vectors, or `None` if either is ~0.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na < COSINE_MIN_NORM || nb < COSINE_MIN_NORM {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine between `∇_y D̃(x̃_i, t_i)` and `∇_y D̃(x_i, 0)` where `x̃` is
/// `x` pushed through `transform` at intensity `t_i`. `None` if every pair
/// was skipped.
pub fn cosine_similarity_diag<R: Rng + ?Sized>(
    critic: &dyn Critic,
    schedule: &ScalingSchedule,
    transform: &Transform,
    x: &Tensor,
    t: &[usize],
    rng: &mut R,
) -> Result<Option<f64>> {
    let x_tilde = transform.apply(schedule, x, t, rng)?;
    let g_t = critic.input_gradients(&x_tilde, t)?;
    let g_0 = critic.input_gradients(x, &vec![0; t.len()])?;
    let cosines: Vec<f64> = (0..x.rows())
        .filter_map(|i| cosine(g_t.row(i), g_0.row(i)))
        .collect();
    if cosines.is_empty() {
        return Ok(None);
    }
    Ok(Some(cosines.iter().sum::<f64>() / cosines.len() as f64))
}

/// Tolerance on `|Σp - 1|` for grid inputs.
pub const GRID_SUM_TOL: f64 = 1e-9;

/// Jensen–Shannon divergence between two cell-probability vectors (natural log).
pub fn js_on_grid(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::GridMismatch(format!("{} vs {} cells", p.len(), q.len())));
    }
    for v in [p, q] {
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > GRID_SUM_TOL || v.iter().any(|&x| x < 0.0) {
            return Err(Error::NotNormalized { sum });
        }
    }
    let half_kl = |a: f64, b: f64| {
        if a > 0.0 {
            a * (2.0 * a / (a + b)).ln()
        } else {
            0.0
        }
    };
    let js: f64 = p.iter().zip(q).map(|(&a, &b)| 0.5 * (half_kl(a, b) + half_kl(b, a))).sum();
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}
