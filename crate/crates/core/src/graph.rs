//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only tape: every op pushes a node whose inputs
//! have smaller ids, and [`Graph::backward`] walks ids in strictly decreasing
//! order. Forward values are cached on the node and reused by the backward
//! rules. Every op checks its output for NaN/Inf.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    Log(NodeId),
    Square(NodeId),
    Mean(NodeId),
    Sum(NodeId),
    VarianceRows(NodeId),
    Affine(NodeId, f64),
    ScaleRows(NodeId, Vec<f64>),
    ScaleElems(NodeId, Vec<f64>),
    ConcatCols(NodeId, NodeId),
    Reshape(NodeId),
    Clamp(NodeId, f64, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Mean(..) => "mean",
            Op::Sum(..) => "sum",
            Op::VarianceRows(..) => "variance_over_batch",
            Op::Affine(..) => "affine",
            Op::ScaleRows(..) => "scale_rows",
            Op::ScaleElems(..) => "scale_elems",
            Op::ConcatCols(..) => "concat_feature",
            Op::Reshape(..) => "reshape",
            Op::Clamp(..) => "clamp",
        }
    }

    fn inputs(&self) -> [Option<NodeId>; 2] {
        match *self {
            Op::Leaf => [None, None],
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::ConcatCols(a, b) => [Some(a), Some(b)],
            Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::VarianceRows(a)
            | Op::Affine(a, ..)
            | Op::ScaleRows(a, _)
            | Op::ScaleElems(a, _)
            | Op::Reshape(a)
            | Op::Clamp(a, ..) => [Some(a), None],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by node id; `None` for nodes the loss does not depend on.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros shaped like `like` when it is unused.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ar, ac) = ta.dims2();
        let (br, bc) = tb.dims2();
        if ac != br {
            return Err(Error::shape("matmul", format!("({ar},{ac}) x ({br},{bc})")));
        }
        let (c, m, n) = gemm(ta.data(), (ar, ac), false, tb.data(), (br, bc), false);
        let out = Tensor::new(vec![m, n], c)?;
        self.push(Op::MatMul(a, b), out)
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (r, c) = tx.dims2();
        if tb.len() != c {
            return Err(Error::shape("add_bias", format!("{c} columns, bias {}", tb.len())));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(vec![r, c], data)?;
        self.push(Op::AddBias(x, bias), out)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let tb = self.value(b).data();
        let mut out = self.value(a).clone();
        for (v, w) in out.data_mut().iter_mut().zip(tb) {
            *v -= w;
        }
        self.push(Op::Sub(a, b), out)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let out = self
            .value(x)
            .map(|v| if v > 0.0 { v } else { slope * v });
        self.push(Op::LeakyRelu(x, slope), out)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), out)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).map(f64::ln);
        self.push(Op::Log(x), out)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).map(|v| v * v);
        self.push(Op::Square(x), out)
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::EmptyBatch("mean"));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::Mean(x), Tensor::scalar(m))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum::<f64>();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// Biased (divide by m) variance of each column over the m rows.
    pub fn variance_over_batch(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        let (m, c) = t.dims2();
        if m == 0 {
            return Err(Error::EmptyBatch("variance_over_batch"));
        }
        let mut out = vec![0.0; c];
        for (j, o) in out.iter_mut().enumerate() {
            let mu = (0..m).map(|i| t.get(i, j)).sum::<f64>() / m as f64;
            *o = (0..m).map(|i| (t.get(i, j) - mu).powi(2)).sum::<f64>() / m as f64;
        }
        self.push(Op::VarianceRows(x), Tensor::new(vec![c], out)?)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(Op::Affine(x, scale), out)
    }

    pub fn scalar_mul(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.affine(x, c, 0.0)
    }

    /// Multiplies row i by the constant `factors[i]`.
    pub fn scale_rows(&mut self, x: NodeId, factors: Vec<f64>) -> Result<NodeId> {
        let t = self.value(x);
        let (r, c) = t.dims2();
        if factors.len() != r {
            return Err(Error::shape("scale_rows", format!("{r} rows, {} factors", factors.len())));
        }
        let mut out = t.clone();
        for (row, f) in out.data_mut().chunks_mut(c.max(1)).zip(&factors) {
            row.iter_mut().for_each(|v| *v *= f);
        }
        self.push(Op::ScaleRows(x, factors), out)
    }

    /// Elementwise product with a constant tensor of the same length.
    pub fn scale_elems(&mut self, x: NodeId, weights: Vec<f64>) -> Result<NodeId> {
        let t = self.value(x);
        if weights.len() != t.len() {
            return Err(Error::shape("scale_elems", format!("{} vs {}", t.len(), weights.len())));
        }
        let mut out = t.clone();
        out.data_mut().iter_mut().zip(&weights).for_each(|(v, w)| *v *= w);
        self.push(Op::ScaleElems(x, weights), out)
    }

    /// Concatenates feature columns: `(m,p) ++ (m,q) -> (m,p+q)`.
    pub fn concat_feature(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((ra, ca), (rb, cb)) = (ta.dims2(), tb.dims2());
        if ra != rb {
            return Err(Error::shape("concat_feature", format!("{ra} rows vs {rb} rows")));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let out = Tensor::new(vec![ra, ca + cb], data)?;
        self.push(Op::ConcatCols(a, b), out)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).reshaped(shape)?;
        self.push(Op::Reshape(x), out)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp(x, lo, hi), out)
    }

    /// Reverse pass from a scalar loss; the loss gradient w.r.t. itself is 1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let t = self.value(loss);
        if !t.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: t.shape().to_vec(),
            });
        }
        Ok(self.backward_seeded(loss, Tensor::full(t.shape(), 1.0)))
    }

    /// Gradient of `sum(output)` w.r.t. `input`, shaped like `input`.
    ///
    /// For row-independent networks this is the per-sample input gradient.
    pub fn grad_wrt_input(&self, output: NodeId, input: NodeId) -> Result<Tensor> {
        if !self.reaches(output, input) {
            return Err(Error::Unreachable {
                output: output.0,
                input: input.0,
            });
        }
        let seed = Tensor::full(self.value(output).shape(), 1.0);
        let grads = self.backward_seeded(output, seed);
        Ok(grads.get_or_zeros(input, self.value(input)))
    }

    fn reaches(&self, output: NodeId, input: NodeId) -> bool {
        if input > output {
            return false;
        }
        let mut live = vec![false; output.0 + 1];
        live[output.0] = true;
        for id in (input.0..=output.0).rev() {
            if !live[id] {
                continue;
            }
            if id == input.0 {
                return true;
            }
            for parent in self.nodes[id].op.inputs().into_iter().flatten() {
                live[parent.0] = true;
            }
        }
        false
    }

    fn backward_seeded(&self, root: NodeId, seed: Tensor) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            for (parent, contribution) in self.local_grads(node, &g) {
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(NodeId, Tensor)> {
        let y = &node.value;
        let elementwise = |x: NodeId, f: &dyn Fn(f64, f64, f64) -> f64| -> Tensor {
            let xv = self.value(x);
            let data = g
                .data()
                .iter()
                .zip(xv.data())
                .zip(y.data())
                .map(|((&gi, &xi), &yi)| f(gi, xi, yi))
                .collect();
            Tensor::new(xv.shape().to_vec(), data).expect("elementwise shape")
        };
        match node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (gr, gc) = (g.rows(), g.cols());
                let (da, m, k) = gemm(g.data(), (gr, gc), false, tb.data(), tb.dims2(), true);
                let (db, k2, n) = gemm(ta.data(), ta.dims2(), true, g.data(), (gr, gc), false);
                vec![
                    (a, Tensor::new(vec![m, k], da).expect("matmul da")),
                    (b, Tensor::new(vec![k2, n], db).expect("matmul db")),
                ]
            }
            Op::AddBias(x, bias) => {
                let c = g.cols();
                let mut db = vec![0.0; c];
                for row in g.data().chunks(c.max(1)) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                let bshape = self.value(bias).shape().to_vec();
                vec![(x, g.clone()), (bias, Tensor::new(bshape, db).expect("bias grad"))]
            }
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|v| -v))],
            Op::LeakyRelu(x, slope) => {
                vec![(x, elementwise(x, &|gi, xi, _| if xi > 0.0 { gi } else { slope * gi }))]
            }
            Op::Sigmoid(x) => vec![(x, elementwise(x, &|gi, _, yi| gi * yi * (1.0 - yi)))],
            Op::Log(x) => vec![(x, elementwise(x, &|gi, xi, _| gi / xi))],
            Op::Square(x) => vec![(x, elementwise(x, &|gi, xi, _| 2.0 * xi * gi))],
            Op::Mean(x) => {
                let t = self.value(x);
                let v = g.data()[0] / t.len() as f64;
                vec![(x, Tensor::full(t.shape(), v))]
            }
            Op::Sum(x) => vec![(x, Tensor::full(self.value(x).shape(), g.data()[0]))],
            Op::VarianceRows(x) => {
                let t = self.value(x);
                let (m, c) = t.dims2();
                let mut out = Tensor::zeros(t.shape());
                for j in 0..c {
                    let mu = (0..m).map(|i| t.get(i, j)).sum::<f64>() / m as f64;
                    for i in 0..m {
                        out.data_mut()[i * c + j] = g.data()[j] * 2.0 * (t.get(i, j) - mu) / m as f64;
                    }
                }
                vec![(x, out)]
            }
            Op::Affine(x, scale) => vec![(x, g.map(|v| v * scale))],
            Op::ScaleRows(x, ref factors) => {
                let c = g.cols().max(1);
                let mut out = g.clone();
                for (row, f) in out.data_mut().chunks_mut(c).zip(factors) {
                    row.iter_mut().for_each(|v| *v *= f);
                }
                vec![(x, out)]
            }
            Op::ScaleElems(x, ref w) => {
                let mut out = g.clone();
                out.data_mut().iter_mut().zip(w).for_each(|(v, wi)| *v *= wi);
                vec![(x, out)]
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(a).cols();
                let cb = self.value(b).cols();
                let rows = g.rows();
                let (mut da, mut db) = (Vec::with_capacity(rows * ca), Vec::with_capacity(rows * cb));
                for i in 0..rows {
                    let row = g.row(i);
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                vec![
                    (a, Tensor::new(self.value(a).shape().to_vec(), da).expect("concat da")),
                    (b, Tensor::new(self.value(b).shape().to_vec(), db).expect("concat db")),
                ]
            }
            Op::Reshape(x) => vec![(x, g.reshaped(self.value(x).shape()).expect("reshape grad"))],
            Op::Clamp(x, lo, hi) => {
                vec![(x, elementwise(x, &|gi, xi, _| if xi >= lo && xi <= hi { gi } else { 0.0 }))]
            }
        }
    }

    /// Sign pattern of every LeakyReLU input (`true` where the input is > 0).
    ///
    /// Finite-difference checks use it to discard probes that cross a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Op::LeakyRelu(x, _) = node.op {
                pattern.extend(self.value(x).data().iter().map(|&v| v > 0.0));
            }
        }
        pattern
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
