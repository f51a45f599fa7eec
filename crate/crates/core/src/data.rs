//! Ring-of-Gaussians toy data: `Σ_k (1/K) N(μ_k, σ² I₂)` with
//! `μ_k = (cos 2πk/K, sin 2πk/K)`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    pub components: usize,
    /// Per-axis variance σ².
    pub variance: f64,
    /// Training-set size.
    pub n: usize,
}

impl Default for GmmSpec {
    fn default() -> Self {
        GmmSpec {
            components: 8,
            variance: 0.05,
            n: 80,
        }
    }
}

impl GmmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::config("data.components", "must be >= 1"));
        }
        if !(self.variance.is_finite() && self.variance >= 0.0) {
            return Err(Error::config("data.variance", "must be finite and >= 0"));
        }
        if self.n == 0 {
            return Err(Error::config("data.n", "must be >= 1"));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn means(&self) -> Vec<[f64; 2]> {
        (1..=self.components)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / self.components as f64;
                [a.cos(), a.sin()]
            })
            .collect()
    }

    /// Draws `n` points: uniform component, then Gaussian around its mean.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor {
        let means = self.means();
        let sigma = self.sigma();
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let k = rng.gen_range(0..self.components);
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            data.push(means[k][0] + sigma * e0);
            data.push(means[k][1] + sigma * e1);
        }
        Tensor::new(vec![n, 2], data).expect("gmm sample shape")
    }

    /// Exact mixture density at each row of `points`.
    pub fn density(&self, points: &Tensor) -> Vec<f64> {
        let means = self.means();
        let var = self.variance;
        let norm = 1.0 / (2.0 * PI * var) / self.components as f64;
        (0..points.rows())
            .map(|i| {
                let p = points.row(i);
                means
                    .iter()
                    .map(|m| {
                        let d2 = (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2);
                        norm * (-d2 / (2.0 * var)).exp()
                    })
                    .sum()
            })
            .collect()
    }
}

/// Writes a dataset as `x,y` CSV rows.
pub fn write_csv(path: &Path, points: &Tensor) -> Result<()> {
    let mut out = String::from("x,y\n");
    for i in 0..points.rows() {
        let r = points.row(i);
        out.push_str(&format!("{},{}\n", r[0], r[1]));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
