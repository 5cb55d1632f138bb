//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and whatever it needs for
//! the backward rule. [`Tape::backward`] walks the nodes in exact reverse
//! recording order and accumulates `∂loss/∂node` into every node whose value
//! requires a gradient. Gradients accumulate across calls until
//! [`Tape::zero_grad`].

mod conv;
mod norm;
mod ops;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use norm::{RunningStats, BN_EPSILON, BN_MOMENTUM};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        inv_std: Vec<f64>,
        xhat: Vec<f64>,
        training: bool,
    },
    Relu {
        input: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        input: Var,
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    ChannelAffine {
        input: Var,
        scale: Vec<f64>,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    Softmax {
        input: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Gather {
        input: Var,
        indices: Vec<usize>,
    },
    ChannelMean {
        input: Var,
        channel: usize,
    },
    WeightedSum {
        terms: Vec<(Var, f64)>,
    },
    Reshape {
        input: Var,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::WeightedSum { terms } => terms.iter().map(|(v, _)| *v).collect(),
            Op::Relu { input }
            | Op::MaxPool { input, .. }
            | Op::AvgPool { input, .. }
            | Op::GlobalAvgPool { input }
            | Op::Scale { input, .. }
            | Op::ChannelAffine { input, .. }
            | Op::Sum { input }
            | Op::Mean { input }
            | Op::Softmax { input }
            | Op::Gather { input, .. }
            | Op::ChannelMean { input, .. }
            | Op::Reshape { input } => vec![*input],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor; its `requires_grad` flag decides whether it
    /// receives a gradient.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.nodes[var.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match op {
            Op::Leaf => value.requires_grad(),
            _ => op
                .inputs()
                .iter()
                .any(|v| self.nodes[v.0].value.requires_grad()),
        };
        let value = value.with_requires_grad(requires_grad);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].value.requires_grad()
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.nodes[loss.0].value.numel();
        if numel != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got {numel} elements"
            )));
        }
        if !self.needs(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &upstream, &mut grads);
            self.nodes[i].value.accumulate_grad(&upstream);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut send = |var: Var, delta: Vec<f64>| match grads[var.0].as_mut() {
            Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
            None => grads[var.0] = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let x = self.value(*input);
                let w = self.value(*kernel);
                let (dx, dw, db) =
                    conv::conv2d_backward(x, w, node.value.shape(), g, *stride, *padding);
                if self.needs(*input) {
                    send(*input, dx);
                }
                if self.needs(*kernel) {
                    send(*kernel, dw);
                }
                if let Some(b) = bias {
                    if self.needs(*b) {
                        send(*b, db);
                    }
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                inv_std,
                xhat,
                training,
            } => {
                let shape = node.value.shape();
                let gamma_v = self.value(*gamma).data();
                let (dx, dgamma, dbeta) =
                    norm::batchnorm_backward(shape, g, gamma_v, inv_std, xhat, *training);
                if self.needs(*input) {
                    send(*input, dx);
                }
                if self.needs(*gamma) {
                    send(*gamma, dgamma);
                }
                if self.needs(*beta) {
                    send(*beta, dbeta);
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                send(
                    *input,
                    x.iter()
                        .zip(g)
                        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                        .collect(),
                );
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![0.0; self.value(*input).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                send(*input, dx);
            }
            Op::AvgPool {
                input,
                kernel,
                stride,
            } => {
                let dx = conv::avgpool_backward(
                    self.value(*input).shape(),
                    node.value.shape(),
                    g,
                    *kernel,
                    *stride,
                );
                send(*input, dx);
            }
            Op::GlobalAvgPool { input } => {
                let shape = self.value(*input).shape();
                let hw = shape[2] * shape[3];
                let inv = 1.0 / hw as f64;
                let dx = (0..shape.iter().product::<usize>())
                    .map(|k| g[k / hw] * inv)
                    .collect();
                send(*input, dx);
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (dx, dw, db) = ops::linear_backward(x, w, g);
                if self.needs(*input) {
                    send(*input, dx);
                }
                if self.needs(*weight) {
                    send(*weight, dw);
                }
                if let Some(b) = bias {
                    if self.needs(*b) {
                        send(*b, db);
                    }
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    send(*a, g.to_vec());
                }
                if self.needs(*b) {
                    send(*b, g.to_vec());
                }
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.needs(*a) {
                    send(*a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                }
                if self.needs(*b) {
                    send(*b, g.iter().zip(av).map(|(g, a)| g * a).collect());
                }
            }
            Op::Scale { input, factor } => send(*input, g.iter().map(|g| g * factor).collect()),
            Op::ChannelAffine { input, scale } => {
                let shape = self.value(*input).shape();
                let c = shape[1];
                let hw: usize = shape[2..].iter().product();
                let dx = g
                    .iter()
                    .enumerate()
                    .map(|(k, g)| g * scale[(k / hw) % c])
                    .collect();
                send(*input, dx);
            }
            Op::Sum { input } => send(*input, vec![g[0]; self.value(*input).numel()]),
            Op::Mean { input } => {
                let n = self.value(*input).numel();
                send(*input, vec![g[0] / n as f64; n]);
            }
            Op::Softmax { input } => {
                let cols = *node.value.shape().last().unwrap();
                send(*input, ops::softmax_backward(node.value.data(), g, cols));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len();
                let k = probs.len() / n;
                let scale = g[0] / n as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (row, &t) in targets.iter().enumerate() {
                    dx[row * k + t] -= scale;
                }
                send(*logits, dx);
            }
            Op::Gather { input, indices } => {
                let mut dx = vec![0.0; self.value(*input).numel()];
                for (&src, &gv) in indices.iter().zip(g) {
                    dx[src] += gv;
                }
                send(*input, dx);
            }
            Op::ChannelMean { input, channel } => {
                let shape = self.value(*input).shape();
                let (c, hw) = (shape[1], shape[2] * shape[3]);
                let inv = 1.0 / hw as f64;
                let mut dx = vec![0.0; self.value(*input).numel()];
                for (n, &gv) in g.iter().enumerate() {
                    let base = (n * c + channel) * hw;
                    dx[base..base + hw].iter_mut().for_each(|d| *d = gv * inv);
                }
                send(*input, dx);
            }
            Op::WeightedSum { terms } => {
                for (var, w) in terms {
                    if self.needs(*var) {
                        send(*var, vec![g[0] * w]);
                    }
                }
            }
            Op::Reshape { input } => send(*input, g.to_vec()),
        }
    }
}
