use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self, field: &'static str) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(field, "lr must be positive"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::config(field, "betas must lie in [0, 1)"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::config(field, "eps must be positive"));
        }
        Ok(())
    }
}

/// Adam with bias correction. Moments are kept one vector per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Adam {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape("adam", format!("{} params, {} grads", params.len(), grads.len())));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape("adam", format!("param {k}: {} vs {}", p.len(), g.len())));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn flat_moments(&self) -> (Vec<f64>, Vec<f64>) {
        (self.m.concat(), self.v.concat())
    }

    pub fn load_flat_moments(&mut self, m: &[f64], v: &[f64]) -> Result<()> {
        let total: usize = self.m.iter().map(Vec::len).sum();
        if m.len() != total || v.len() != total {
            return Err(Error::Checkpoint(format!(
                "optimizer moments hold {} / {} values, expected {total}",
                m.len(),
                v.len()
            )));
        }
        let mut off = 0;
        for (mk, vk) in self.m.iter_mut().zip(self.v.iter_mut()) {
            let n = mk.len();
            mk.copy_from_slice(&m[off..off + n]);
            vk.copy_from_slice(&v[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -1.0, 0.5]).unwrap()];
        let g = vec![Tensor::new(vec![3], vec![0.3, -2.0, 0.0]).unwrap()];
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.update(&mut p, &g).unwrap();
        let d = p[0].data();
        assert!((d[0] - (1.0 - 2e-4)).abs() < 1e-10);
        assert!((d[1] - (-1.0 + 2e-4)).abs() < 1e-10);
        assert_eq!(d[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![Tensor::new(vec![2], vec![3.0, -2.0]).unwrap()];
        let cfg = AdamConfig {
            lr: 0.05,
            beta1: 0.9,
            ..Default::default()
        };
        let mut opt = Adam::new(cfg, &p);
        for _ in 0..2000 {
            let g = vec![p[0].map(|x| 2.0 * x)];
            opt.update(&mut p, &g).unwrap();
        }
        assert!(p[0].data().iter().all(|x| x.abs() < 1e-3));
    }

    #[test]
    fn moments_round_trip() {
        let p = vec![Tensor::zeros(&[2, 2]), Tensor::zeros(&[3])];
        let mut a = Adam::new(AdamConfig::default(), &p);
        let (m, v): (Vec<f64>, Vec<f64>) = ((0..7).map(f64::from).collect(), (0..7).map(|i| f64::from(i) * 2.0).collect());
        a.load_flat_moments(&m, &v).unwrap();
        assert_eq!(a.flat_moments(), (m, v));
        assert!(a.load_flat_moments(&[0.0], &[0.0]).is_err());
    }
}
