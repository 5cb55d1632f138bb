//! Image priors subtracted from the ascent objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weights and exponents of the α-norm and total-variation penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizerConfig {
    pub lambda_alpha: f64,
    pub alpha: f64,
    pub lambda_tv: f64,
    pub beta: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            lambda_alpha: 0.0,
            alpha: 6.0,
            lambda_tv: 0.0,
            beta: 2.0,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_alpha >= 0.0 && self.lambda_tv >= 0.0) {
            return Err(Error::Config(
                "regularizer weights must be non-negative".into(),
            ));
        }
        if !(self.alpha > 1.0) {
            return Err(Error::Config(format!(
                "alpha must exceed 1, got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.lambda_alpha > 0.0 || self.lambda_tv > 0.0
    }

    /// `λ_α·R_α(x) + λ_tv·R_V(x)` and its gradient.
    pub fn penalty(&self, x: &Tensor) -> Result<(f64, Vec<f64>)> {
        let mut value = 0.0;
        let mut grad = vec![0.0; x.numel()];
        if self.lambda_alpha > 0.0 {
            let (v, g) = alpha_norm_with_grad(x, self.alpha);
            value += self.lambda_alpha * v;
            grad.iter_mut()
                .zip(g)
                .for_each(|(a, b)| *a += self.lambda_alpha * b);
        }
        if self.lambda_tv > 0.0 {
            let (v, g) = total_variation_with_grad(x, self.beta)?;
            value += self.lambda_tv * v;
            grad.iter_mut()
                .zip(g)
                .for_each(|(a, b)| *a += self.lambda_tv * b);
        }
        Ok((value, grad))
    }
}

/// Mean of every element, clamped into `[min, max]` so that rounding cannot
/// move it off a constant image's value.
fn global_mean(x: &Tensor) -> f64 {
    let lo = x.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    x.mean().clamp(lo, hi)
}

/// `Σ |xᵢ − x̄|^α` with `x̄` the mean over every element.
pub fn regularizer_alpha(x: &Tensor, alpha: f64) -> f64 {
    let m = global_mean(x);
    x.data().iter().map(|v| (v - m).abs().powf(alpha)).sum()
}

pub fn alpha_norm_with_grad(x: &Tensor, alpha: f64) -> (f64, Vec<f64>) {
    let m = global_mean(x);
    let n = x.numel() as f64;
    let value = regularizer_alpha(x, alpha);
    let local: Vec<f64> = x
        .data()
        .iter()
        .map(|v| {
            let d = v - m;
            if d == 0.0 {
                0.0
            } else {
                alpha * d.abs().powf(alpha - 1.0) * d.signum()
            }
        })
        .collect();
    // The mean depends on every element.
    let correction = local.iter().sum::<f64>() / n;
    (value, local.into_iter().map(|g| g - correction).collect())
}

fn planes(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        [h, w] => Ok((1, *h, *w)),
        s => Err(Error::dim("regularizer_tv", "rank", 3, s.len())),
    }
}

/// `Σ_c Σ_{i,j} ((x_{i,j+1} − x_{ij})² + (x_{i+1,j} − x_{ij})²)^{β/2}` over a
/// `[C, H, W]` (or `[H, W]`) tensor; a difference that would leave the image
/// is dropped from its term.
pub fn regularizer_tv(x: &Tensor, beta: f64) -> Result<f64> {
    Ok(total_variation_with_grad(x, beta)?.0)
}

pub fn total_variation_with_grad(x: &Tensor, beta: f64) -> Result<(f64, Vec<f64>)> {
    let (c, h, w) = planes(x)?;
    let d = x.data();
    let mut value = 0.0;
    let mut grad = vec![0.0; d.len()];
    for ch in 0..c {
        let at = |i: usize, j: usize| (ch * h + i) * w + j;
        for i in 0..h {
            for j in 0..w {
                let here = d[at(i, j)];
                let dx = if j + 1 < w {
                    d[at(i, j + 1)] - here
                } else {
                    0.0
                };
                let dy = if i + 1 < h {
                    d[at(i + 1, j)] - here
                } else {
                    0.0
                };
                let s = dx * dx + dy * dy;
                if s == 0.0 {
                    continue;
                }
                value += s.powf(beta / 2.0);
                let ds = beta / 2.0 * s.powf(beta / 2.0 - 1.0);
                if j + 1 < w {
                    grad[at(i, j + 1)] += ds * 2.0 * dx;
                }
                if i + 1 < h {
                    grad[at(i + 1, j)] += ds * 2.0 * dy;
                }
                grad[at(i, j)] -= ds * 2.0 * (dx + dy);
            }
        }
    }
    Ok((value, grad))
}
