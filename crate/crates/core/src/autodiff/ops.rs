use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `c = alpha * a·b + beta * c` on row-major slices. `a` is `m×k`, `b` is `k×n`.
/// Either operand may be passed transposed by giving its storage shape and
/// setting the corresponding flag.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f64],
    a_shape: (usize, usize),
    a_t: bool,
    b: &[f64],
    b_shape: (usize, usize),
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    let a = ArrayView2::from_shape(a_shape, a).expect("gemm: lhs shape");
    let b = ArrayView2::from_shape(b_shape, b).expect("gemm: rhs shape");
    let a = if a_t { a.reversed_axes() } else { a };
    let b = if b_t { b.reversed_axes() } else { b };
    let mut c = ArrayViewMut2::from_shape((a.nrows(), b.ncols()), c).expect("gemm: output shape");
    general_mat_mul(1.0, &a, &b, beta, &mut c);
}

pub(super) fn linear_backward(x: &Tensor, w: &Tensor, g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let mut dx = vec![0.0; n * f];
    gemm(g, (n, o), false, w.data(), (o, f), false, &mut dx, 0.0);
    let mut dw = vec![0.0; o * f];
    gemm(g, (n, o), true, x.data(), (n, f), false, &mut dw, 0.0);
    let mut db = vec![0.0; o];
    for row in g.chunks_exact(o) {
        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
    }
    (dx, dw, db)
}

pub(super) fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / total));
    }
    out
}

pub(super) fn softmax_backward(y: &[f64], g: &[f64], cols: usize) -> Vec<f64> {
    let mut dx = Vec::with_capacity(y.len());
    for (yr, gr) in y.chunks_exact(cols).zip(g.chunks_exact(cols)) {
        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
        dx.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
    }
    dx
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        for (axis, (x, y)) in a.shape().iter().zip(b.shape()).enumerate() {
            if x != y {
                return Err(Error::dim(op, axis.to_string(), *x, *y));
            }
        }
        return Err(Error::dim(op, "rank", a.rank(), b.rank()));
    }
    Ok(())
}

fn rows_cols(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [k] => Ok((1, *k)),
        [n, k] => Ok((*n, *k)),
        s => Err(Error::dim(op, "rank", 2, s.len())),
    }
}

impl Tape {
    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|v| v.max(0.0)).collect(),
        )
        .expect("relu preserves shape");
        self.push(out, Op::Relu { input })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect(),
        )?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(a, b)| a * b).collect(),
        )?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let x = self.value(input);
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|v| v * factor).collect(),
        )
        .expect("scale preserves shape");
        self.push(out, Op::Scale { input, factor })
    }

    /// Per-channel `x * scale[c] + shift[c]` on an `[N, C, ...]` tensor.
    pub fn channel_affine(&mut self, input: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let x = self.value(input);
        if x.rank() < 2 {
            return Err(Error::dim("channel_affine", "rank", 2, x.rank()));
        }
        let c = x.shape()[1];
        if scale.len() != c || shift.len() != c {
            return Err(Error::dim(
                "channel_affine",
                "channels",
                c,
                scale.len().max(shift.len()),
            ));
        }
        let hw: usize = x.shape()[2..].iter().product();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let ch = (k / hw) % c;
                v * scale[ch] + shift[ch]
            })
            .collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Op::ChannelAffine {
                input,
                scale: scale.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        self.push(Tensor::scalar(s), Op::Sum { input })
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let s = self.value(input).mean();
        self.push(Tensor::scalar(s), Op::Mean { input })
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).reshape(shape)?;
        Ok(self.push(out, Op::Reshape { input }))
    }

    /// `x · weightᵀ + bias` for `x: [N, F]`, `weight: [O, F]`, `bias: [O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let (n, f) = rows_cols("linear", x)?;
        if w.rank() != 2 {
            return Err(Error::dim("linear", "weight rank", 2, w.rank()));
        }
        let o = w.shape()[0];
        if w.shape()[1] != f {
            return Err(Error::dim("linear", "in_features", w.shape()[1], f));
        }
        let mut out = vec![0.0; n * o];
        gemm(
            x.data(),
            (n, f),
            false,
            w.data(),
            (o, f),
            true,
            &mut out,
            0.0,
        );
        if let Some(b) = bias {
            let b = self.value(b);
            if b.numel() != o {
                return Err(Error::dim("linear", "bias", o, b.numel()));
            }
            for row in out.chunks_exact_mut(o) {
                row.iter_mut().zip(b.data()).for_each(|(v, b)| *v += b);
            }
        }
        let out = Tensor::new(vec![n, o], out)?;
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Row-wise softmax over the last axis of a `[N, K]` (or `[K]`) tensor.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (_, k) = rows_cols("softmax", x)?;
        let out = Tensor::new(x.shape().to_vec(), softmax_rows(x.data(), k))?;
        Ok(self.push(out, Op::Softmax { input }))
    }

    /// Mean over the batch of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let (n, k) = rows_cols("cross_entropy", x)?;
        if targets.len() != n {
            return Err(Error::dim("cross_entropy", "batch", n, targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::dim("cross_entropy", "target", k, bad));
        }
        let probs = softmax_rows(x.data(), k);
        let mut loss = 0.0;
        for (row, &t) in x.data().chunks_exact(k).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        loss /= n as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Picks elements by flat index into a rank-1 tensor.
    pub fn gather(&mut self, input: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(input);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.numel()) {
            return Err(Error::dim("gather", "index", x.numel(), bad));
        }
        let data = indices.iter().map(|&i| x.data()[i]).collect();
        let out = Tensor::new(vec![indices.len()], data)?;
        Ok(self.push(
            out,
            Op::Gather {
                input,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Spatial mean of one channel of an `[N, C, H, W]` tensor, giving `[N]`.
    pub fn channel_mean(&mut self, input: Var, channel: usize) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 4 {
            return Err(Error::dim("channel_mean", "rank", 4, x.rank()));
        }
        let (n, c, hw) = (x.shape()[0], x.shape()[1], x.shape()[2] * x.shape()[3]);
        if channel >= c {
            return Err(Error::dim("channel_mean", "channel", c, channel));
        }
        let data = (0..n)
            .map(|i| {
                let base = (i * c + channel) * hw;
                x.data()[base..base + hw].iter().sum::<f64>() / hw as f64
            })
            .collect();
        let out = Tensor::new(vec![n], data)?;
        Ok(self.push(out, Op::ChannelMean { input, channel }))
    }

    /// `Σ wᵢ·sᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        if terms.is_empty() {
            return Err(Error::Usage("weighted_sum of zero terms".into()));
        }
        let mut total = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.numel() != 1 {
                return Err(Error::dim("weighted_sum", "numel", 1, t.numel()));
            }
            total += w * t.data()[0];
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        ))
    }
}
