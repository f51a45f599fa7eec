//! Scaling schedule `s_t` and the sample transforms applied identically to
//! real and generated batches.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// `s_0 = 1`, `s_t = s_{t-1} · sqrt(1 - β0 (1 - t/T) - βT t/T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSchedule {
    beta0: f64,
    beta_t: f64,
    t_max: usize,
    s: Vec<f64>,
}

impl ScalingSchedule {
    pub fn new(beta0: f64, beta_t: f64, t_max: usize) -> Result<Self> {
        if !(beta0.is_finite() && beta0 >= 0.0) {
            return Err(Error::config("schedule.beta0", "must be finite and >= 0"));
        }
        if !(beta_t.is_finite() && beta_t >= beta0) {
            return Err(Error::config("schedule.beta_t", "must be finite and >= beta0"));
        }
        if t_max == 0 {
            return Err(Error::config("schedule.t_max", "must be >= 1"));
        }
        let mut s = Vec::with_capacity(t_max + 1);
        s.push(1.0);
        for t in 1..=t_max {
            let frac = t as f64 / t_max as f64;
            let radicand = 1.0 - beta0 * (1.0 - frac) - beta_t * frac;
            if radicand <= 0.0 {
                return Err(Error::Schedule { t, radicand });
            }
            s.push(s[t - 1] * radicand.sqrt());
        }
        Ok(ScalingSchedule {
            beta0,
            beta_t,
            t_max,
            s,
        })
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn beta_t(&self) -> f64 {
        self.beta_t
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn values(&self) -> &[f64] {
        &self.s
    }

    pub fn s(&self, t: usize) -> Result<f64> {
        self.s.get(t).copied().ok_or(Error::IntensityOutOfRange {
            t,
            t_max: self.t_max,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    ScaleOnly,
    NoiseOnly { sigma_noise: f64 },
    Diffusion { sigma_noise: f64 },
    Rotate90k { k: u8 },
}

impl Transform {
    pub fn name(&self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::ScaleOnly => "scale_only",
            Transform::NoiseOnly { .. } => "noise_only",
            Transform::Diffusion { .. } => "diffusion",
            Transform::Rotate90k { .. } => "rotate90k",
        }
    }

    pub fn is_invertible(&self) -> bool {
        matches!(
            self,
            Transform::Identity | Transform::ScaleOnly | Transform::Rotate90k { .. }
        )
    }

    /// Whether applying the transform draws Gaussian noise.
    pub fn is_stochastic(&self) -> bool {
        matches!(self, Transform::NoiseOnly { .. } | Transform::Diffusion { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Transform::NoiseOnly { sigma_noise } | Transform::Diffusion { sigma_noise }
                if !(sigma_noise.is_finite() && sigma_noise >= 0.0) =>
            {
                Err(Error::config("transform.sigma_noise", "must be finite and >= 0"))
            }
            _ => Ok(()),
        }
    }

    /// Draws everything the transform needs for one batch (noise included),
    /// so the same plan can be applied to plain tensors or graph nodes.
    pub fn plan<R: Rng + ?Sized>(
        &self,
        schedule: &ScalingSchedule,
        t: &[usize],
        dim: usize,
        rng: &mut R,
    ) -> Result<TransformPlan> {
        let scales = t.iter().map(|&ti| schedule.s(ti)).collect::<Result<Vec<_>>>()?;
        let m = t.len();
        let mut plan = TransformPlan {
            dim,
            row_scale: None,
            rotation: None,
            noise: None,
        };
        match *self {
            Transform::Identity => {}
            Transform::ScaleOnly => plan.row_scale = Some(scales),
            Transform::NoiseOnly { sigma_noise } => {
                let eps = (0..m * dim).map(|_| sigma_noise * rng.sample::<f64, _>(StandardNormal));
                plan.noise = Some(Tensor::new(vec![m, dim], eps.collect())?);
            }
            Transform::Diffusion { sigma_noise } => {
                let mut eps = Vec::with_capacity(m * dim);
                for &s in &scales {
                    let amp = (1.0 - s * s).max(0.0).sqrt() * sigma_noise;
                    for _ in 0..dim {
                        eps.push(amp * rng.sample::<f64, _>(StandardNormal));
                    }
                }
                plan.row_scale = Some(scales);
                plan.noise = Some(Tensor::new(vec![m, dim], eps)?);
            }
            Transform::Rotate90k { k } => {
                if !dim.is_multiple_of(2) {
                    return Err(Error::shape("rotate90k", format!("needs an even dimension, got {dim}")));
                }
                plan.rotation = Some(k % 4);
            }
        }
        Ok(plan)
    }

    pub fn apply<R: Rng + ?Sized>(
        &self,
        schedule: &ScalingSchedule,
        x: &Tensor,
        t: &[usize],
        rng: &mut R,
    ) -> Result<Tensor> {
        self.plan(schedule, t, x.cols(), rng)?.apply(x)
    }

    pub fn invert(&self, schedule: &ScalingSchedule, x_tilde: &Tensor, t: &[usize]) -> Result<Tensor> {
        if x_tilde.rows() != t.len() {
            return Err(Error::shape("invert", format!("{} rows, {} intensities", x_tilde.rows(), t.len())));
        }
        match *self {
            Transform::Identity => Ok(x_tilde.clone()),
            Transform::ScaleOnly => {
                let c = x_tilde.cols();
                let mut out = x_tilde.clone();
                for (row, &ti) in out.data_mut().chunks_mut(c.max(1)).zip(t) {
                    let s = schedule.s(ti)?;
                    row.iter_mut().for_each(|v| *v /= s);
                }
                Ok(out)
            }
            Transform::Rotate90k { k } => Ok(rotate_pairs(x_tilde, (4 - k % 4) % 4)),
            Transform::NoiseOnly { .. } | Transform::Diffusion { .. } => {
                Err(Error::NotInvertible { kind: self.name() })
            }
        }
    }
}

/// Pre-drawn randomness and factors for one batch: `x ↦ R^k (c_i x_i) + ε_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformPlan {
    dim: usize,
    row_scale: Option<Vec<f64>>,
    rotation: Option<u8>,
    noise: Option<Tensor>,
}

impl TransformPlan {
    /// Multiplies every row factor by a constant (fixed data scaling).
    pub fn scaled_by(mut self, c: f64, rows: usize) -> Self {
        if c != 1.0 {
            let scale = self.row_scale.get_or_insert_with(|| vec![1.0; rows]);
            scale.iter_mut().for_each(|s| *s *= c);
        }
        self
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut out = x.clone();
        if let Some(scale) = &self.row_scale {
            for (row, s) in out.data_mut().chunks_mut(self.dim.max(1)).zip(scale) {
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        if let Some(k) = self.rotation {
            out = rotate_pairs(&out, k);
        }
        if let Some(noise) = &self.noise {
            out.add_assign(noise);
        }
        Ok(out)
    }

    /// Same map as [`TransformPlan::apply`], recorded on the graph so gradients
    /// flow back into `x`.
    pub fn apply_node(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        self.check(g.value(x))?;
        let mut h = x;
        if let Some(scale) = &self.row_scale {
            h = g.scale_rows(h, scale.clone())?;
        }
        if let Some(k) = self.rotation {
            let r = g.leaf(rotation_matrix(self.dim, k));
            h = g.matmul(h, r)?;
        }
        if let Some(noise) = &self.noise {
            let n = g.leaf(noise.clone());
            h = g.add(h, n)?;
        }
        Ok(h)
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.dim {
            return Err(Error::shape("transform", format!("planned for {} columns, got {}", self.dim, x.cols())));
        }
        let rows = self
            .row_scale
            .as_ref()
            .map(Vec::len)
            .or_else(|| self.noise.as_ref().map(Tensor::rows));
        if let Some(r) = rows {
            if r != x.rows() {
                return Err(Error::shape("transform", format!("planned for {r} rows, got {}", x.rows())));
            }
        }
        Ok(())
    }
}

/// Rotates each coordinate pair `(2j, 2j+1)` by `k·π/2`.
fn rotate_pairs(x: &Tensor, k: u8) -> Tensor {
    let mut out = x.clone();
    let c = x.cols();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        for pair in row.chunks_mut(2) {
            if let [a, b] = pair {
                let (na, nb) = match k % 4 {
                    0 => (*a, *b),
                    1 => (-*b, *a),
                    2 => (-*a, -*b),
                    _ => (*b, -*a),
                };
                *a = na;
                *b = nb;
            }
        }
    }
    out
}

/// Right-multiplication matrix `M` with `x·M = rotate_pairs(x, k)`.
fn rotation_matrix(dim: usize, k: u8) -> Tensor {
    let mut m = Tensor::zeros(&[dim, dim]);
    let (c, s) = match k % 4 {
        0 => (1.0, 0.0),
        1 => (0.0, 1.0),
        2 => (-1.0, 0.0),
        _ => (0.0, -1.0),
    };
    for j in (0..dim).step_by(2) {
        // row vector (a, b) ↦ (c a - s b, s a + c b)
        let d = m.data_mut();
        d[j * dim + j] = c;
        d[j * dim + j + 1] = s;
        d[(j + 1) * dim + j] = -s;
        d[(j + 1) * dim + j + 1] = c;
    }
    m
}
