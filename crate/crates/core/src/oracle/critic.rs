use crate::augmentation::ScalingSchedule;
use crate::error::Result;
use crate::graph::Graph;
use crate::models::{Critic, Discriminator};
use crate::tensor::Tensor;

/// `D̃(y, t) = g(y / s_t)` with `g` a fixed network evaluated at `t = 0`.
///
/// This is the form the optimal discriminator takes under pure scaling, so
/// its input gradients at `s_t x` and at `x` are parallel.
#[derive(Debug, Clone)]
pub struct ScaleInvariantCritic {
    pub base: Discriminator,
    pub schedule: ScalingSchedule,
}

impl ScaleInvariantCritic {
    fn forward(&self, y: &Tensor, t: &[usize], want_grad: bool) -> Result<(Vec<f64>, Option<Tensor>)> {
        let mut g = Graph::new();
        let bound = self.base.net.bind(&mut g);
        let yn = g.leaf(y.clone());
        let inv = t
            .iter()
            .map(|&ti| self.schedule.s(ti).map(|s| 1.0 / s))
            .collect::<Result<Vec<_>>>()?;
        let x = g.scale_rows(yn, inv)?;
        let zeros = vec![0; t.len()];
        let out = self
            .base
            .forward(&mut g, &bound, x, &zeros, self.schedule.t_max())?;
        let probs = g.value(out).data().to_vec();
        let grad = if want_grad {
            Some(g.grad_wrt_input(out, yn)?)
        } else {
            None
        };
        Ok((probs, grad))
    }
}

impl Critic for ScaleInvariantCritic {
    fn probabilities(&self, y: &Tensor, t: &[usize]) -> Result<Vec<f64>> {
        Ok(self.forward(y, t, false)?.0)
    }

    fn input_gradients(&self, y: &Tensor, t: &[usize]) -> Result<Tensor> {
        Ok(self.forward(y, t, true)?.1.expect("gradient requested"))
    }
}
