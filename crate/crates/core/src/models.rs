//! Generator and intensity-conditioned discriminator MLPs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Architecture of a fully connected LeakyReLU network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// Number of dense layers (LeakyReLU between consecutive layers).
    pub layers: usize,
    pub slope: f64,
}

impl MlpSpec {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.in_dim];
        w.extend(std::iter::repeat_n(self.hidden, self.layers.saturating_sub(1)));
        w.push(self.out_dim);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.layers == 0 || self.in_dim == 0 || self.out_dim == 0 || self.hidden == 0 {
            return Err(Error::config(name, "dimensions and layer count must be positive"));
        }
        if !(self.slope.is_finite() && self.slope >= 0.0) {
            return Err(Error::config(format!("{name}.slope"), "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    /// `[w0, b0, w1, b1, ...]`, weights shaped `(fan_in, fan_out)`.
    params: Vec<Tensor>,
}

impl Mlp {
    /// He-uniform hidden layers; the final layer is additionally scaled by
    /// `final_scale`. Biases start at zero.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, final_scale: f64, rng: &mut R) -> Self {
        let widths = spec.widths();
        let last = widths.len() - 2;
        let mut params = Vec::with_capacity(2 * spec.layers);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let mut bound = (6.0 / fan_in as f64).sqrt();
            if l == last {
                bound *= final_scale;
            }
            let w = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-1.0..=1.0) * bound)
                .collect();
            params.push(Tensor::new(vec![fan_in, fan_out], w).expect("weight shape"));
            params.push(Tensor::zeros(&[fan_out]));
        }
        Mlp { spec, params }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let params = spec
            .widths()
            .windows(2)
            .flat_map(|p| [Tensor::zeros(&[p[0], p[1]]), Tensor::zeros(&[p[1]])])
            .collect();
        Mlp { spec, params }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Pushes every parameter onto the graph as a leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params.iter().map(|p| g.leaf(p.clone())).collect()
    }

    /// Forward through bound parameters; returns the pre-activation output.
    pub fn forward(&self, g: &mut Graph, bound: &[NodeId], x: NodeId) -> Result<NodeId> {
        let in_cols = g.value(x).cols();
        if in_cols != self.spec.in_dim {
            return Err(Error::shape(
                "mlp",
                format!("expected {} input features, got {in_cols}", self.spec.in_dim),
            ));
        }
        let mut h = x;
        let n = bound.len() / 2;
        for l in 0..n {
            h = g.matmul(h, bound[2 * l])?;
            h = g.add_bias(h, bound[2 * l + 1])?;
            if l + 1 < n {
                h = g.leaky_relu(h, self.spec.slope)?;
            }
        }
        Ok(h)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.params.iter().map(Tensor::len).sum();
        if flat.len() != total {
            return Err(Error::Checkpoint(format!(
                "parameter block has {} values, network needs {total}",
                flat.len()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// `G_θ`: latent → data.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub net: Mlp,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        out_dim: usize,
        hidden: usize,
        layers: usize,
        slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = MlpSpec {
            in_dim: latent_dim,
            hidden,
            out_dim,
            layers,
            slope,
        };
        spec.validate("generator")?;
        Ok(Generator {
            net: Mlp::init(spec, 0.1, rng),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.net.spec.out_dim
    }

    pub fn forward(&self, g: &mut Graph, bound: &[NodeId], z: NodeId) -> Result<NodeId> {
        self.net.forward(g, bound, z)
    }

    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.net.bind(&mut g);
        let zn = g.leaf(z.clone());
        let out = self.forward(&mut g, &bound, zn)?;
        Ok(g.value(out).clone())
    }
}

/// How the intensity `t` enters the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conditioning {
    /// One extra input column holding `t / t_max`.
    #[default]
    Ratio,
    /// `2·freqs` extra columns: `sin(2^k π t/t_max)`, `cos(2^k π t/t_max)`.
    Sinusoidal { freqs: usize },
}

impl Conditioning {
    pub fn width(&self) -> usize {
        match *self {
            Conditioning::Ratio => 1,
            Conditioning::Sinusoidal { freqs } => 2 * freqs,
        }
    }

    fn features(&self, t: &[usize], t_max: usize) -> Tensor {
        let w = self.width();
        let mut data = Vec::with_capacity(t.len() * w);
        for &ti in t {
            let u = ti as f64 / t_max as f64;
            match *self {
                Conditioning::Ratio => data.push(u),
                Conditioning::Sinusoidal { freqs } => {
                    for k in 0..freqs {
                        let a = std::f64::consts::PI * (1u64 << k) as f64 * u;
                        data.push(a.sin());
                        data.push(a.cos());
                    }
                }
            }
        }
        Tensor::new(vec![t.len(), w], data).expect("conditioning shape")
    }
}

/// `D̃_φ(y, t)`: sigmoid output in (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: Mlp,
    pub conditioning: Conditioning,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        hidden: usize,
        layers: usize,
        slope: f64,
        conditioning: Conditioning,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = MlpSpec {
            in_dim: data_dim + conditioning.width(),
            hidden,
            out_dim: 1,
            layers,
            slope,
        };
        spec.validate("discriminator")?;
        Ok(Discriminator {
            net: Mlp::init(spec, 0.1, rng),
            conditioning,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.net.spec.in_dim - self.conditioning.width()
    }

    /// Graph forward; returns the `(m, 1)` probability node.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &[NodeId],
        y: NodeId,
        t: &[usize],
        t_max: usize,
    ) -> Result<NodeId> {
        if t_max == 0 {
            return Err(Error::config("t_max", "must be positive"));
        }
        if let Some(&bad) = t.iter().find(|&&ti| ti > t_max) {
            return Err(Error::IntensityOutOfRange { t: bad, t_max });
        }
        let rows = g.value(y).rows();
        if rows != t.len() {
            return Err(Error::shape("discriminate", format!("{rows} samples, {} intensities", t.len())));
        }
        let feat = g.leaf(self.conditioning.features(t, t_max));
        let input = g.concat_feature(y, feat)?;
        let logit = self.net.forward(g, bound, input)?;
        g.sigmoid(logit)
    }

    pub fn discriminate(&self, y: &Tensor, t: &[usize], t_max: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.net.bind(&mut g);
        let yn = g.leaf(y.clone());
        let out = self.forward(&mut g, &bound, yn, t, t_max)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Per-sample `∇_y D̃(y_i, t_i)`, shaped like `y`.
    pub fn input_gradients(&self, y: &Tensor, t: &[usize], t_max: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.net.bind(&mut g);
        let yn = g.leaf(y.clone());
        let out = self.forward(&mut g, &bound, yn, t, t_max)?;
        g.grad_wrt_input(out, yn)
    }

    pub fn critic(&self, t_max: usize) -> DiscriminatorCritic<'_> {
        DiscriminatorCritic { disc: self, t_max }
    }
}

/// Anything that maps `(y, t)` batches to probabilities with input gradients.
pub trait Critic {
    fn probabilities(&self, y: &Tensor, t: &[usize]) -> Result<Vec<f64>>;
    fn input_gradients(&self, y: &Tensor, t: &[usize]) -> Result<Tensor>;
}

#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorCritic<'a> {
    disc: &'a Discriminator,
    t_max: usize,
}

impl Critic for DiscriminatorCritic<'_> {
    fn probabilities(&self, y: &Tensor, t: &[usize]) -> Result<Vec<f64>> {
        self.disc.discriminate(y, t, self.t_max)
    }

    fn input_gradients(&self, y: &Tensor, t: &[usize]) -> Result<Tensor> {
        self.disc.input_gradients(y, t, self.t_max)
    }
}
