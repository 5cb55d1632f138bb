use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running mean/variance of a batchnorm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub(super) fn batchnorm_backward(
    shape: &[usize],
    g: &[f64],
    gamma: &[f64],
    inv_std: &[f64],
    xhat: &[f64],
    training: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let m = (n * hw) as f64;
    let mut dx = vec![0.0; g.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        let planes = || (0..n).map(move |s| (s * c + ch) * hw);
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        for base in planes() {
            for k in base..base + hw {
                sum_g += g[k];
                sum_gx += g[k] * xhat[k];
            }
        }
        dgamma[ch] = sum_gx;
        dbeta[ch] = sum_g;
        let scale = gamma[ch] * inv_std[ch];
        for base in planes() {
            for k in base..base + hw {
                dx[k] = if training {
                    scale * (g[k] - sum_g / m - xhat[k] * sum_gx / m)
                } else {
                    scale * g[k]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

impl Tape {
    /// Batch normalization over `[N, C, H, W]`.
    ///
    /// Training mode normalizes by the biased batch variance and folds the
    /// batch statistics into `running` (unbiased variance, momentum
    /// [`BN_MOMENTUM`]); eval mode normalizes by `running`.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats,
        training: bool,
    ) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 4 {
            return Err(Error::dim("batchnorm2d", "rank", 4, x.rank()));
        }
        let (n, c, hw) = (x.shape()[0], x.shape()[1], x.shape()[2] * x.shape()[3]);
        for (name, len) in [
            ("gamma", self.value(gamma).numel()),
            ("beta", self.value(beta).numel()),
            ("running_mean", running.mean.len()),
            ("running_var", running.var.len()),
        ] {
            if len != c {
                return Err(Error::dim("batchnorm2d", name, c, len));
            }
        }
        let m = n * hw;
        let (mean, var) = if training {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let vals = (0..n).flat_map(|s| x.data()[(s * c + ch) * hw..][..hw].iter());
                let mu = vals.clone().sum::<f64>() / m as f64;
                mean[ch] = mu;
                var[ch] = vals.map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            }
            (mean, var)
        } else {
            (running.mean.clone(), running.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        for (k, (&v, (xh, o))) in x
            .data()
            .iter()
            .zip(xhat.iter_mut().zip(out.iter_mut()))
            .enumerate()
        {
            let ch = (k / hw) % c;
            *xh = (v - mean[ch]) * inv_std[ch];
            *o = gv[ch] * *xh + bv[ch];
        }
        if training {
            let unbias = if m > 1 {
                m as f64 / (m - 1) as f64
            } else {
                1.0
            };
            for ch in 0..c {
                running.mean[ch] = (1.0 - BN_MOMENTUM) * running.mean[ch] + BN_MOMENTUM * mean[ch];
                running.var[ch] =
                    (1.0 - BN_MOMENTUM) * running.var[ch] + BN_MOMENTUM * var[ch] * unbias;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                inv_std,
                xhat,
                training,
            },
        ))
    }
}
