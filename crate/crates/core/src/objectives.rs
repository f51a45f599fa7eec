//! GAN value function, scale-wise variance regularizer and the fixed-mean
//! second-moment regularizer.
//!
//! The `*_node` builders record the expressions on a [`Graph`] for training;
//! the plain `f64` functions evaluate the same builders on leaf inputs.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{ScalingSchedule, Transform};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::models::Discriminator;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before `log`.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    /// `E_t[Var_x D̃(s_t x, t)]`.
    #[default]
    Variance,
    /// `E[(D̃ - 1/2)²]`.
    Modified,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GenLossKind {
    /// Minimize `mean log(1 - D(fake))`.
    #[default]
    Saturating,
    /// Minimize `-mean log D(fake)`.
    NonSaturating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub reg_kind: RegKind,
    pub gen_loss_kind: GenLossKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.0,
            reg_kind: RegKind::Variance,
            gen_loss_kind: GenLossKind::Saturating,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("loss.lambda", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Whether the regularizer contributes anything.
    pub fn regularized(&self) -> bool {
        self.lambda > 0.0 && self.reg_kind != RegKind::None
    }
}

fn log_prob(g: &mut Graph, p: NodeId) -> Result<NodeId> {
    let c = g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    g.log(c)
}

fn log_one_minus(g: &mut Graph, p: NodeId) -> Result<NodeId> {
    let c = g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let q = g.affine(c, -1.0, 1.0)?;
    g.log(q)
}

/// `mean log D(real) + mean log(1 - D(fake)) - λ·reg`, the quantity the
/// discriminator maximizes.
pub fn disc_objective_node(
    g: &mut Graph,
    d_real: NodeId,
    d_fake: NodeId,
    reg: Option<NodeId>,
    lambda: f64,
) -> Result<NodeId> {
    let lr = log_prob(g, d_real)?;
    let real = g.mean(lr)?;
    let lf = log_one_minus(g, d_fake)?;
    let fake = g.mean(lf)?;
    let value = g.add(real, fake)?;
    match reg {
        Some(r) if lambda != 0.0 => {
            let penalty = g.scalar_mul(r, lambda)?;
            g.sub(value, penalty)
        }
        _ => Ok(value),
    }
}

/// Generator loss to minimize.
pub fn gen_loss_node(g: &mut Graph, d_fake: NodeId, kind: GenLossKind) -> Result<NodeId> {
    match kind {
        GenLossKind::Saturating => {
            let l = log_one_minus(g, d_fake)?;
            g.mean(l)
        }
        GenLossKind::NonSaturating => {
            let l = log_prob(g, d_fake)?;
            let m = g.mean(l)?;
            g.scalar_mul(m, -1.0)
        }
    }
}

pub fn modified_reg_node(g: &mut Graph, outputs: NodeId) -> Result<NodeId> {
    if g.value(outputs).is_empty() {
        return Err(Error::EmptyBatch("modified_reg"));
    }
    let centered = g.affine(outputs, 1.0, -0.5)?;
    let sq = g.square(centered)?;
    g.mean(sq)
}

/// Distinct intensities with their relative frequencies, in ascending order.
pub fn intensity_weights(t: &[usize]) -> Vec<(usize, f64)> {
    let mut counts = BTreeMap::new();
    for &ti in t {
        *counts.entry(ti).or_insert(0usize) += 1;
    }
    let total = t.len() as f64;
    counts.into_iter().map(|(ti, c)| (ti, c as f64 / total)).collect()
}

/// Scale-wise variance: for every `t_j`, the biased variance over the real
/// batch of `D̃(S_{t_j} x_i, t_j)`, averaged over `j`.
///
/// Repeated `t_j` values are evaluated once and weighted by multiplicity,
/// which is the same average as the literal double loop. Rows are laid out
/// sample-major so that a reshape to `(n, K)` puts each intensity in a column.
#[allow(clippy::too_many_arguments)]
pub fn variance_reg_node<R: Rng + ?Sized>(
    g: &mut Graph,
    disc: &Discriminator,
    bound: &[NodeId],
    schedule: &ScalingSchedule,
    transform: &Transform,
    data_scale: f64,
    x: &Tensor,
    t: &[usize],
    t_max: usize,
    rng: &mut R,
) -> Result<NodeId> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::BatchTooSmall {
            op: "variance_reg",
            needed: 2,
            got: n,
        });
    }
    if t.is_empty() {
        return Err(Error::EmptyBatch("variance_reg"));
    }
    let groups = intensity_weights(t);
    let k = groups.len();
    let dim = x.cols();
    let mut rows = Vec::with_capacity(n * k * dim);
    let mut t_rows = Vec::with_capacity(n * k);
    for i in 0..n {
        for &(tj, _) in &groups {
            rows.extend_from_slice(x.row(i));
            t_rows.push(tj);
        }
    }
    let stacked = Tensor::new(vec![n * k, dim], rows)?;
    let plan = transform
        .plan(schedule, &t_rows, dim, rng)?
        .scaled_by(data_scale, n * k);
    let input = g.leaf(plan.apply(&stacked)?);
    let d = disc.forward(g, bound, input, &t_rows, t_max)?;
    let grid = g.reshape(d, &[n, k])?;
    let var = g.variance_over_batch(grid)?;
    let weighted = g.scale_elems(var, groups.iter().map(|&(_, w)| w).collect())?;
    g.sum(weighted)
}

fn with_leaf<F>(values: &[f64], f: F) -> Result<f64>
where
    F: FnOnce(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let leaf = g.leaf(Tensor::column(values.to_vec()));
    let out = f(&mut g, leaf)?;
    Ok(g.value(out).data()[0])
}

pub fn disc_objective(d_real: &[f64], d_fake: &[f64], reg_value: f64, lambda: f64) -> Result<f64> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::EmptyBatch("disc_objective"));
    }
    let mut g = Graph::new();
    let r = g.leaf(Tensor::column(d_real.to_vec()));
    let f = g.leaf(Tensor::column(d_fake.to_vec()));
    let reg = g.leaf(Tensor::scalar(reg_value));
    let out = disc_objective_node(&mut g, r, f, Some(reg), lambda)?;
    Ok(g.value(out).data()[0])
}

pub fn gen_loss(d_fake: &[f64], kind: GenLossKind) -> Result<f64> {
    with_leaf(d_fake, |g, leaf| gen_loss_node(g, leaf, kind))
}

pub fn modified_reg(outputs: &[f64]) -> Result<f64> {
    with_leaf(outputs, modified_reg_node)
}

/// Mean over groups of each group's biased variance.
pub fn scale_wise_variance(groups: &[Vec<f64>]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::EmptyBatch("scale_wise_variance"));
    }
    let mut total = 0.0;
    for grp in groups {
        if grp.len() < 2 {
            return Err(Error::BatchTooSmall {
                op: "scale_wise_variance",
                needed: 2,
                got: grp.len(),
            });
        }
        total += with_leaf(grp, |g, leaf| g.variance_over_batch(leaf))?;
    }
    Ok(total / groups.len() as f64)
}

/// Plain evaluation of [`variance_reg_node`] (no gradients kept).
#[allow(clippy::too_many_arguments)]
pub fn variance_reg<R: Rng + ?Sized>(
    disc: &Discriminator,
    schedule: &ScalingSchedule,
    transform: &Transform,
    data_scale: f64,
    x: &Tensor,
    t: &[usize],
    t_max: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = disc.net.bind(&mut g);
    let out = variance_reg_node(&mut g, disc, &bound, schedule, transform, data_scale, x, t, t_max, rng)?;
    Ok(g.value(out).data()[0])
}
