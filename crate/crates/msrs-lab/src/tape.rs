//! Reverse-mode automatic differentiation over a per-step tape.
//!
//! The tape is rebuilt for every training step (define-by-run). Node ids are
//! handed out in creation order, every op references only earlier ids, so the
//! record is topologically sorted by construction and one reverse sweep
//! visits each node exactly once.
//!
//! The primitive set is exactly what residual MLPs need: matmul, bias add,
//! elementwise arithmetic, four activations, mean-variance normalization
//! with learnable gain/bias, a diagonal residual-branch scale, and two
//! losses. No convolution, no attention.

use crate::error::{LabError, Result};
use crate::tensor::{matmul_raw, Tensor};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Exact Gaussian-CDF GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

/// d/dx gelu(x) = Phi(x) + x * phi(x).
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
    cdf + x * pdf
}

/// Numerically stable logistic sigmoid; safe for |x| up to 1e6 and beyond.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    AddBias { x: usize, bias: usize },
    RowScale { x: usize, v: usize },
    Tanh { x: usize },
    Relu { x: usize },
    Gelu { x: usize },
    Sigmoid { x: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, eps: f64 },
    Sum { x: usize },
    Mse { pred: usize, target: Tensor },
    SoftmaxXent { logits: usize, classes: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// The computation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by node id, produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of a node, or zeros when the loss never touched it.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(LabError::shape(
                "matmul",
                format!("need 2D operands, got {:?} and {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        if k != k2 {
            return Err(LabError::shape(
                "matmul",
                format!("inner dims differ: {:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out = Tensor::new(vec![m, n], matmul_raw(ta.data(), tb.data(), m, k, n))?;
        Ok(self.push(out, Op::Matmul { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul { a: a.0, b: b.0 }))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.nodes[x.0].value.map(|v| c * v);
        self.push(out, Op::Scale { x: x.0, c })
    }

    /// x[N,d] + bias[d], broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let tx = &self.nodes[x.0].value;
        let tb = &self.nodes[bias.0].value;
        if tx.shape().len() != 2 || tb.len() != tx.cols() {
            return Err(LabError::shape(
                "add_bias",
                format!("{:?} + bias {:?}", tx.shape(), tb.shape()),
            ));
        }
        let (n, d) = (tx.rows(), tx.cols());
        let mut data = tx.data().to_vec();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] += tb.data()[j];
            }
        }
        let out = Tensor::new(vec![n, d], data)?;
        Ok(self.push(out, Op::AddBias { x: x.0, bias: bias.0 }))
    }

    /// x[N,d] * v[d], broadcast over rows: the LayerScale diagonal.
    pub fn row_scale(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let tx = &self.nodes[x.0].value;
        let tv = &self.nodes[v.0].value;
        if tx.shape().len() != 2 || tv.len() != tx.cols() {
            return Err(LabError::shape(
                "row_scale",
                format!("{:?} * diag {:?}", tx.shape(), tv.shape()),
            ));
        }
        let (n, d) = (tx.rows(), tx.cols());
        let mut data = tx.data().to_vec();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] *= tv.data()[j];
            }
        }
        let out = Tensor::new(vec![n, d], data)?;
        Ok(self.push(out, Op::RowScale { x: x.0, v: v.0 }))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0].value.map(f64::tanh);
        self.push(out, Op::Tanh { x: x.0 })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0].value.map(|v| v.max(0.0));
        self.push(out, Op::Relu { x: x.0 })
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0].value.map(gelu_scalar);
        self.push(out, Op::Gelu { x: x.0 })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0].value.map(sigmoid_scalar);
        self.push(out, Op::Sigmoid { x: x.0 })
    }

    /// Per-row mean-variance normalization over the feature axis with
    /// learnable gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let tx = &self.nodes[x.0].value;
        let tg = &self.nodes[gain.0].value;
        let tb = &self.nodes[bias.0].value;
        if tx.shape().len() != 2 || tg.len() != tx.cols() || tb.len() != tx.cols() {
            return Err(LabError::shape(
                "layer_norm",
                format!(
                    "x {:?}, gain {:?}, bias {:?}",
                    tx.shape(),
                    tg.shape(),
                    tb.shape()
                ),
            ));
        }
        let (n, d) = (tx.rows(), tx.cols());
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                data[i * d + j] = (row[j] - mean) * rstd * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::new(vec![n, d], data)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                eps,
            },
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x.0].value.sum();
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 })
    }

    /// Mean squared error over every element of the batch.
    pub fn mse(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        let tp = &self.nodes[pred.0].value;
        if !tp.same_shape(target) {
            return Err(LabError::shape(
                "mse",
                format!("pred {:?} vs target {:?}", tp.shape(), target.shape()),
            ));
        }
        let n = tp.len() as f64;
        let loss = tp
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred: pred.0,
                target: target.clone(),
            },
        ))
    }

    /// Mean softmax cross-entropy against integer class targets.
    pub fn softmax_xent(&mut self, logits: NodeId, classes: &[usize]) -> Result<NodeId> {
        let tl = &self.nodes[logits.0].value;
        if tl.shape().len() != 2 || tl.rows() != classes.len() {
            return Err(LabError::shape(
                "softmax_xent",
                format!("logits {:?} vs {} targets", tl.shape(), classes.len()),
            ));
        }
        let c = tl.cols();
        if let Some(&bad) = classes.iter().find(|&&k| k >= c) {
            return Err(LabError::InvalidArgument(format!(
                "class index {bad} out of range for {c} classes"
            )));
        }
        let n = tl.rows();
        let mut loss = 0.0;
        for i in 0..n {
            let row = tl.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln() + mx;
            loss -= row[classes[i]] - lse;
        }
        loss /= n as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits: logits.0,
                classes: classes.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar loss node. Seeds the loss gradient with
    /// `seed` (1.0 for plain backward); the pass is linear in this seed.
    pub fn backward_seeded(&self, loss: NodeId, seed: f64) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(LabError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(seed));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.accumulate_into_inputs(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.backward_seeded(loss, 1.0)
    }

    fn accumulate_into_inputs(
        &self,
        node: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let add_to = |slot: &mut Option<Tensor>, delta: Tensor| {
            match slot {
                Some(acc) => {
                    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                        *a += d;
                    }
                }
                None => *slot = Some(delta),
            }
        };

        match &self.nodes[node].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                // dA = g . B^T ; dB = A^T . g
                let bt = tb.transposed();
                let da = Tensor::new(vec![m, k], matmul_raw(g.data(), bt.data(), m, n, k))?;
                let at = ta.transposed();
                let db = Tensor::new(vec![k, n], matmul_raw(at.data(), g.data(), k, m, n))?;
                add_to(&mut grads[*a], da);
                add_to(&mut grads[*b], db);
            }
            Op::Add { a, b } => {
                add_to(&mut grads[*a], g.clone());
                add_to(&mut grads[*b], g.clone());
            }
            Op::Sub { a, b } => {
                add_to(&mut grads[*a], g.clone());
                add_to(&mut grads[*b], g.map(|v| -v));
            }
            Op::Mul { a, b } => {
                let da = g.zip_map(&self.nodes[*b].value, "mul_bw", |gv, bv| gv * bv)?;
                let db = g.zip_map(&self.nodes[*a].value, "mul_bw", |gv, av| gv * av)?;
                add_to(&mut grads[*a], da);
                add_to(&mut grads[*b], db);
            }
            Op::Scale { x, c } => {
                let c = *c;
                add_to(&mut grads[*x], g.map(|v| c * v));
            }
            Op::AddBias { x, bias } => {
                add_to(&mut grads[*x], g.clone());
                let d = self.nodes[*bias].value.len();
                let mut db = vec![0.0; d];
                for (idx, &gv) in g.data().iter().enumerate() {
                    db[idx % d] += gv;
                }
                add_to(&mut grads[*bias], Tensor::new(vec![d], db)?);
            }
            Op::RowScale { x, v } => {
                let tx = &self.nodes[*x].value;
                let tv = &self.nodes[*v].value;
                let d = tv.len();
                let mut dx = g.data().to_vec();
                let mut dv = vec![0.0; d];
                for (idx, dxv) in dx.iter_mut().enumerate() {
                    let j = idx % d;
                    dv[j] += *dxv * tx.data()[idx];
                    *dxv *= tv.data()[j];
                }
                add_to(&mut grads[*x], Tensor::new(tx.shape().to_vec(), dx)?);
                add_to(&mut grads[*v], Tensor::new(vec![d], dv)?);
            }
            Op::Tanh { x } => {
                let out = &self.nodes[node].value;
                let dx = g.zip_map(out, "tanh_bw", |gv, t| gv * (1.0 - t * t))?;
                add_to(&mut grads[*x], dx);
            }
            Op::Relu { x } => {
                let tx = &self.nodes[*x].value;
                let dx = g.zip_map(tx, "relu_bw", |gv, v| if v > 0.0 { gv } else { 0.0 })?;
                add_to(&mut grads[*x], dx);
            }
            Op::Gelu { x } => {
                let tx = &self.nodes[*x].value;
                let dx = g.zip_map(tx, "gelu_bw", |gv, v| gv * gelu_grad_scalar(v))?;
                add_to(&mut grads[*x], dx);
            }
            Op::Sigmoid { x } => {
                let out = &self.nodes[node].value;
                let dx = g.zip_map(out, "sigmoid_bw", |gv, s| gv * s * (1.0 - s))?;
                add_to(&mut grads[*x], dx);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let tx = &self.nodes[*x].value;
                let tg = &self.nodes[*gain].value;
                let (n, d) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; n * d];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for i in 0..n {
                    let row = tx.row(i);
                    let grow = &g.data()[i * d..(i + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var =
                        row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let rstd = 1.0 / (var + eps).sqrt();
                    // y = normalized input; dy = upstream through the gain
                    let y: Vec<f64> = row.iter().map(|&v| (v - mean) * rstd).collect();
                    let dy: Vec<f64> = grow
                        .iter()
                        .zip(tg.data())
                        .map(|(&gv, &gn)| gv * gn)
                        .collect();
                    let mean_dy = dy.iter().sum::<f64>() / d as f64;
                    let mean_dyy = dy.iter().zip(&y).map(|(&a, &b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dx[i * d + j] = rstd * (dy[j] - mean_dy - y[j] * mean_dyy);
                        dgain[j] += grow[j] * y[j];
                        dbias[j] += grow[j];
                    }
                }
                add_to(&mut grads[*x], Tensor::new(vec![n, d], dx)?);
                add_to(&mut grads[*gain], Tensor::new(vec![d], dgain)?);
                add_to(&mut grads[*bias], Tensor::new(vec![d], dbias)?);
            }
            Op::Sum { x } => {
                let shape = self.nodes[*x].value.shape().to_vec();
                add_to(&mut grads[*x], Tensor::full(&shape, g.item()));
            }
            Op::Mse { pred, target } => {
                let tp = &self.nodes[*pred].value;
                let scale = 2.0 * g.item() / tp.len() as f64;
                let dp = tp.zip_map(target, "mse_bw", |p, t| scale * (p - t))?;
                add_to(&mut grads[*pred], dp);
            }
            Op::SoftmaxXent { logits, classes } => {
                let tl = &self.nodes[*logits].value;
                let (n, c) = (tl.rows(), tl.cols());
                let scale = g.item() / n as f64;
                let mut dl = vec![0.0; n * c];
                for i in 0..n {
                    let row = tl.row(i);
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|&v| (v - mx).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for j in 0..c {
                        let p = exps[j] / z;
                        dl[i * c + j] = scale * (p - if j == classes[i] { 1.0 } else { 0.0 });
                    }
                }
                add_to(&mut grads[*logits], Tensor::new(vec![n, c], dl)?);
            }
        }
        Ok(())
    }
}

/// One residual MLP block: y = x + D(w2 act(w1 x + b1) + b2) with D the
/// LayerScale diagonal (identity when absent). Without the residual flag the
/// branch output is returned directly.
#[allow(clippy::too_many_arguments)]
pub fn residual_block_forward(
    tape: &mut Tape,
    x: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
    activation: fn(&mut Tape, NodeId) -> NodeId,
    layerscale: Option<NodeId>,
    residual: bool,
) -> Result<NodeId> {
    let h = tape.matmul(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = activation(tape, h);
    let h = tape.matmul(h, w2)?;
    let mut branch = tape.add_bias(h, b2)?;
    if let Some(ls) = layerscale {
        branch = tape.row_scale(branch, ls)?;
    }
    if residual {
        tape.add(x, branch)
    } else {
        Ok(branch)
    }
}
