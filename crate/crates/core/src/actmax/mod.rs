//! Gradient ascent on input pixels toward a chosen network statistic.

mod jitter;
mod regularize;

use serde::{Deserialize, Serialize};

pub use jitter::{gaussian_blur, rotate, translate, Jitter};
pub use regularize::{
    alpha_norm_with_grad, regularizer_alpha, regularizer_tv, total_variation_with_grad,
    RegularizerConfig,
};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::model::{ForwardPass, LayerAddress, Model};
use crate::rng::substream;
use crate::tensor::{argmax, Tensor};

/// `Φ(x) = Σ weightᵢ · score(addressᵢ, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    terms: Vec<(LayerAddress, f64)>,
}

impl Objective {
    pub fn new(terms: Vec<(LayerAddress, f64)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Usage("an objective needs at least one term".into()));
        }
        if let Some((a, w)) = terms.iter().find(|(_, w)| !w.is_finite()) {
            return Err(Error::Usage(format!("term {a} has non-finite weight {w}")));
        }
        Ok(Self { terms })
    }

    pub fn single(address: LayerAddress) -> Self {
        Self {
            terms: vec![(address, 1.0)],
        }
    }

    pub fn terms(&self) -> &[(LayerAddress, f64)] {
        &self.terms
    }

    /// Multiplies every term weight by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|(a, w)| (a.clone(), w * c)).collect(),
        }
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        self.terms.iter().try_for_each(|(a, _)| a.validate(model))
    }

    /// Records `Σ_batch Φ` as a scalar node.
    pub fn record(&self, pass: &mut ForwardPass) -> Result<Var> {
        let mut parts = Vec::with_capacity(self.terms.len());
        for (address, weight) in &self.terms {
            let per_image = address.record(pass)?;
            parts.push((pass.tape.sum(per_image), *weight));
        }
        pass.tape.weighted_sum(&parts)
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, (a, w)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{w}*{a}")?;
        }
        Ok(())
    }
}

/// `Φ(x)` for a single `[3, H, W]` image.
pub fn evaluate_objective(model: &Model, objective: &Objective, x: &Tensor) -> Result<f64> {
    objective.validate(model)?;
    let (logits, acts) = model.forward_with_activations(x)?;
    let mut total = 0.0;
    for (address, weight) in objective.terms() {
        total += weight * address.scores(&logits, &acts)?[0];
    }
    Ok(total)
}

/// Value of `Φ`, its gradient with respect to the pixels, and the predicted
/// class, for a single `[3, H, W]` image.
pub fn objective_gradient(
    model: &Model,
    objective: &Objective,
    x: &Tensor,
) -> Result<(f64, Tensor, usize)> {
    objective.validate(model)?;
    let mut pass = model.record(x, true)?;
    let phi = objective.record(&mut pass)?;
    pass.tape.backward(phi)?;
    let value = pass.tape.value(phi).data()[0];
    let pred = argmax(pass.tape.value(pass.logits).data());
    let grad = pass
        .tape
        .grad(pass.input)
        .expect("input requires grad")
        .to_vec();
    let shape = model.check_input(x)?.shape()[1..].to_vec();
    Ok((value, Tensor::new(shape, grad)?, pred))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AscentConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub jitter: Option<Jitter>,
    /// Clamp pixels to `[0, 1]` after every step.
    pub clamp_to_data_range: bool,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 100,
            seed: 0,
            jitter: None,
            clamp_to_data_range: false,
        }
    }
}

impl AscentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(self.lr * self.epochs as f64).is_finite() {
            return Err(Error::Config(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if let Some(j) = &self.jitter {
            j.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentTrace {
    pub start_image: Tensor,
    pub final_image: Tensor,
    /// Regularized objective after each update.
    pub objective_per_epoch: Vec<f64>,
    /// Predicted class after each update.
    pub predictions: Vec<usize>,
    pub start_prediction: usize,
    /// First epoch (1-based) after which the prediction differs from the
    /// start image's.
    pub flip_epoch: Option<usize>,
}

impl AscentTrace {
    /// L2 norm of `final − start`.
    pub fn diff_energy(&self) -> f64 {
        self.final_image
            .data()
            .iter()
            .zip(self.start_image.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Maximizes `Φ(x) − λ_α R_α(x) − λ_tv R_V(x)` from `start` with fixed-step
/// gradient ascent. Model weights are never touched.
///
/// A non-finite objective stops the run with [`Error::Aborted`], which
/// carries the trace up to the last finite epoch.
pub fn ascend(
    model: &Model,
    objective: &Objective,
    reg: &RegularizerConfig,
    cfg: &AscentConfig,
    start: &Tensor,
) -> Result<AscentTrace> {
    reg.validate()?;
    cfg.validate()?;
    objective.validate(model)?;
    let shape = model.check_input(start)?.shape()[1..].to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let start = start.reshape(&shape)?;
    let mut rng = substream(cfg.seed, "jitter");

    let total = |x: &Tensor| -> Result<(f64, Vec<f64>, usize)> {
        let (phi, grad, pred) = objective_gradient(model, objective, x)?;
        let mut grad = grad.into_data();
        let mut value = phi;
        if reg.is_active() {
            let (penalty, pgrad) = reg.penalty(x)?;
            value -= penalty;
            grad.iter_mut().zip(pgrad).for_each(|(g, p)| *g -= p);
        }
        Ok((value, grad, pred))
    };

    let (value0, mut grad, start_prediction) = total(&start)?;
    let mut trace = AscentTrace {
        start_image: start.clone(),
        final_image: start.clone(),
        objective_per_epoch: Vec::with_capacity(cfg.epochs),
        predictions: Vec::with_capacity(cfg.epochs),
        start_prediction,
        flip_epoch: None,
    };
    if !value0.is_finite() {
        return Err(Error::Aborted {
            epoch: 0,
            trace: Box::new(trace),
        });
    }
    let mut x = start;
    for epoch in 1..=cfg.epochs {
        if let Some(j) = &cfg.jitter {
            j.apply(&mut grad, c, h, w, &mut rng);
        }
        for (p, g) in x.data_mut().iter_mut().zip(&grad) {
            *p += cfg.lr * g;
            if cfg.clamp_to_data_range {
                *p = p.clamp(0.0, 1.0);
            }
        }
        let (value, next_grad, pred) = total(&x)?;
        if !value.is_finite() || !x.is_finite() {
            return Err(Error::Aborted {
                epoch,
                trace: Box::new(trace),
            });
        }
        trace.final_image = x.clone();
        trace.objective_per_epoch.push(value);
        trace.predictions.push(pred);
        if trace.flip_epoch.is_none() && pred != start_prediction {
            trace.flip_epoch = Some(epoch);
        }
        grad = next_grad;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests;
