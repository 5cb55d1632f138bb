use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Model;
use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Tensor;

/// SGD hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Randomly mirror each training image left-right.
    pub hflip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            hflip: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochStats>,
    pub validation_accuracy: Option<f64>,
}

fn hflip(pixels: &Tensor) -> Tensor {
    let s = pixels.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let src = pixels.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let x = i % w;
        src[i - x + (w - 1 - x)]
    })
}

/// Trains `model` in place and reports per-epoch loss/accuracy on the
/// (augmented) training batches plus accuracy on `validation` if given.
pub fn train(
    model: &mut Model,
    dataset: &[LabeledImage],
    validation: Option<&[LabeledImage]>,
    cfg: &TrainConfig,
) -> Result<TrainingReport> {
    if cfg.batch_size == 0 {
        return Err(Error::Usage("batch_size must be positive".into()));
    }
    let k = model.num_classes();
    if let Some(bad) = dataset
        .iter()
        .chain(validation.unwrap_or(&[]))
        .find(|i| i.label >= k)
    {
        return Err(Error::Usage(format!(
            "image {} has label {} but the model has {k} classes",
            bad.source_id, bad.label
        )));
    }
    let mut rng = substream(cfg.seed, "train");
    let mut velocity: BTreeMap<String, Vec<f64>> = model
        .params
        .iter()
        .map(|(n, t)| (n.clone(), vec![0.0; t.numel()]))
        .collect();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut report = TrainingReport {
        epochs: Vec::with_capacity(cfg.epochs),
        validation_accuracy: None,
    };

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let pixels: Vec<Tensor> = chunk
                .iter()
                .map(|&i| {
                    let p = &dataset[i].pixels;
                    if cfg.hflip && rng.random::<bool>() {
                        hflip(p)
                    } else {
                        p.clone()
                    }
                })
                .collect();
            let refs: Vec<&Tensor> = pixels.iter().collect();
            let batch = Tensor::stack(&refs)?;
            let targets: Vec<usize> = chunk.iter().map(|&i| dataset[i].label).collect();

            let mut pass = model.record_training(&batch)?;
            let loss = pass.tape.cross_entropy(pass.logits, &targets)?;
            let loss_value = pass.tape.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss_value} at epoch {epoch}, batch {} (lr {})",
                    b + 1,
                    cfg.lr
                )));
            }
            pass.tape.backward(loss)?;

            let logits = pass.tape.value(pass.logits);
            correct += logits
                .data()
                .chunks_exact(k)
                .zip(&targets)
                .filter(|(row, &t)| crate::tensor::argmax(row) == t)
                .count();
            loss_sum += loss_value * chunk.len() as f64;
            seen += chunk.len();

            for (name, var) in &pass.params {
                let grad = pass.tape.grad(*var).expect("parameters require grad");
                let param = model
                    .params
                    .get_mut(name)
                    .expect("pass params mirror the model");
                let v = velocity.get_mut(name).expect("velocity per param");
                for ((p, vi), g) in param.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
                    let g = g + cfg.weight_decay * *p;
                    *vi = cfg.momentum * *vi + g;
                    *p -= cfg.lr * *vi;
                }
            }
        }
        report.epochs.push(EpochStats {
            epoch,
            loss: loss_sum / seen.max(1) as f64,
            accuracy: correct as f64 / seen.max(1) as f64,
        });
    }
    if let Some(val) = validation {
        report.validation_accuracy = Some(evaluate_accuracy(model, val)?);
    }
    Ok(report)
}

/// Fraction of `images` whose eval-mode argmax equals the label.
pub fn evaluate_accuracy(model: &Model, images: &[LabeledImage]) -> Result<f64> {
    if images.is_empty() {
        return Ok(0.0);
    }
    let preds = model.predict(images)?;
    let correct = preds
        .iter()
        .zip(images)
        .filter(|(p, i)| **p == i.label)
        .count();
    Ok(correct as f64 / images.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hflip_mirrors_rows() {
        let t = Tensor::from_fn(&[1, 2, 3], |i| i as f64);
        assert_eq!(hflip(&t).data(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
    }
}
