//! Intensity distribution `π(t) = w·δ_0 + (1-w)·π_0` and the rules that move
//! its ceiling `T` during training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pi0Kind {
    /// Uniform on `{1, …, T}`.
    #[default]
    Uniform,
    /// `π_0(t) ∝ t` on `{1, …, T}`.
    Priority,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityDistribution {
    pub pi0: Pi0Kind,
    pub current_t: usize,
    /// Probability of the point mass at `t = 0`.
    pub mix_weight: f64,
}

impl IntensityDistribution {
    pub fn new(pi0: Pi0Kind, current_t: usize, mix_weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mix_weight) {
            return Err(Error::config("strategy.mix_weight", "must lie in [0, 1]"));
        }
        Ok(IntensityDistribution {
            pi0,
            current_t,
            mix_weight,
        })
    }

    /// Probability mass function over `{0, …, current_t}`.
    pub fn pmf(&self) -> Vec<f64> {
        let t = self.current_t;
        let mut p = vec![0.0; t + 1];
        if t == 0 {
            p[0] = 1.0;
            return p;
        }
        p[0] = self.mix_weight;
        let rest = 1.0 - self.mix_weight;
        match self.pi0 {
            Pi0Kind::Uniform => (1..=t).for_each(|k| p[k] = rest / t as f64),
            Pi0Kind::Priority => {
                let total = (t * (t + 1) / 2) as f64;
                (1..=t).for_each(|k| p[k] = rest * k as f64 / total);
            }
        }
        p
    }

    /// Draws `m` intensities. With `current_t == 0` every draw is 0.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Vec<usize> {
        (0..m).map(|_| self.sample_one(rng)).collect()
    }

    fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let t = self.current_t;
        let u: f64 = rng.gen();
        if t == 0 || u < self.mix_weight {
            return 0;
        }
        let v: f64 = rng.gen();
        match self.pi0 {
            Pi0Kind::Uniform => 1 + ((v * t as f64) as usize).min(t - 1),
            Pi0Kind::Priority => {
                // smallest k with k(k+1)/2 > v·T(T+1)/2
                let target = v * (t * (t + 1) / 2) as f64;
                let mut k = (((1.0 + 8.0 * target).sqrt() - 1.0) / 2.0).floor() as usize;
                k = k.clamp(0, t);
                while k > 0 && ((k * (k + 1) / 2) as f64) > target {
                    k -= 1;
                }
                while k < t && ((k * (k + 1) / 2) as f64) <= target {
                    k += 1;
                }
                k.max(1)
            }
        }
    }
}

/// Batch mean of `sign(D - 0.5)`, with `sign(0) = 0`.
pub fn estimate_rd(outputs: &[f64]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::EmptyBatch("estimate_rd"));
    }
    let total: f64 = outputs
        .iter()
        .map(|&d| {
            let x = d - 0.5;
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / outputs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// `T = T_max` throughout.
    Fix,
    /// `T(i) = min(2 T_max i / I, T_max)`.
    LinearConst,
    /// `T ← T + sign(r_d - d_target)` every few iterations.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyState {
    pub kind: StrategyKind,
    pub t_min: usize,
    pub t_max: usize,
    /// Total iteration budget `I` for the linear ramp.
    pub total_iters: u64,
    pub d_target: f64,
    pub current_t: usize,
}

impl StrategyState {
    pub fn new(
        kind: StrategyKind,
        t_min: usize,
        t_max: usize,
        total_iters: u64,
        d_target: f64,
        t_init: usize,
    ) -> Result<Self> {
        if t_min > t_max {
            return Err(Error::config("strategy.t_min", "must not exceed t_max"));
        }
        if t_max == 0 {
            return Err(Error::config("strategy.t_max", "must be >= 1"));
        }
        if !d_target.is_finite() {
            return Err(Error::config("strategy.d_target", "must be finite"));
        }
        if kind == StrategyKind::LinearConst && total_iters == 0 {
            return Err(Error::config("strategy.total_iters", "must be >= 1 for linear_const"));
        }
        let mut state = StrategyState {
            kind,
            t_min,
            t_max,
            total_iters,
            d_target,
            current_t: t_init.clamp(t_min, t_max),
        };
        if kind != StrategyKind::Adaptive {
            state.current_t = state.scheduled_t(0);
        }
        Ok(state)
    }

    fn scheduled_t(&self, iteration: u64) -> usize {
        match self.kind {
            StrategyKind::Fix => self.t_max,
            StrategyKind::LinearConst => {
                let ramp = (2 * self.t_max as u128 * iteration as u128) / self.total_iters as u128;
                (ramp.min(self.t_max as u128) as usize).clamp(self.t_min, self.t_max)
            }
            StrategyKind::Adaptive => self.current_t,
        }
    }

    /// Iteration-driven update for `fix` / `linear_const`; no-op for adaptive.
    pub fn on_iteration(&mut self, iteration: u64) -> usize {
        self.current_t = self.scheduled_t(iteration);
        self.current_t
    }

    /// `r_d`-driven update for the adaptive strategy; no-op otherwise.
    pub fn on_overfit_estimate(&mut self, r_d: f64) -> usize {
        if self.kind == StrategyKind::Adaptive {
            let diff = r_d - self.d_target;
            let t = self.current_t as i64
                + if diff > 0.0 {
                    1
                } else if diff < 0.0 {
                    -1
                } else {
                    0
                };
            self.current_t = (t.max(0) as usize).clamp(self.t_min, self.t_max);
        }
        self.current_t
    }
}
