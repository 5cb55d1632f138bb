//! Heatmaps, robustness under targeted ascent, and dataset-level analyses.

mod analysis;

pub use analysis::{
    activation_histogram, activation_scores, histogram, oos_table, rank_scores, top_k_activating,
    HistogramBin, OosRow, OosTable,
};

use crate::actmax::{ascend, AscentConfig, Objective, RegularizerConfig};
use crate::error::{Error, Result};
use crate::model::{LayerAddress, Model};
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapSource {
    GradCam,
    Diff,
}

/// An `[H, W]` map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub values: Tensor,
    pub source: HeatmapSource,
}

/// Min-max scaling to `[0, 1]`. A constant input maps to all zeros when it
/// is zero and to all ones otherwise.
pub fn normalize_unit(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else if hi > 0.0 {
        vec![1.0; values.len()]
    } else {
        vec![0.0; values.len()]
    }
}

/// Bilinear resize of an `h × w` map with half-pixel centres and edge clamping.
pub fn upsample_bilinear(map: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |o: usize, src: usize, dst: usize| {
        let s = ((o as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(src - 1), s - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, h, out_h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, w, out_w);
            let top = (1.0 - fx) * map[y0 * w + x0] + fx * map[y0 * w + x1];
            let bottom = (1.0 - fx) * map[y1 * w + x0] + fx * map[y1 * w + x1];
            out.push((1.0 - fy) * top + fy * bottom);
        }
    }
    out
}

/// `relu(Σ_k α_k·A_k)` with `α_k` the spatial mean of `∂y/∂A_k`, for one
/// image's `[K, h, w]` activations and gradients.
pub fn grad_cam_map(
    activations: &[f64],
    gradients: &[f64],
    channels: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let hw = h * w;
    let mut map = vec![0.0; hw];
    for k in 0..channels {
        let plane = k * hw..(k + 1) * hw;
        let alpha = gradients[plane.clone()].iter().sum::<f64>() / hw as f64;
        for (m, a) in map.iter_mut().zip(&activations[plane]) {
            *m += alpha * a;
        }
    }
    map.iter().map(|v| v.max(0.0)).collect()
}

/// Grad-CAM of `class`'s logit at `layer`, upsampled to the input size.
pub fn grad_cam(model: &Model, x: &Tensor, class: usize, layer: &str) -> Result<Heatmap> {
    LayerAddress::Presoftmax { class }.validate(model)?;
    model.layer_channels(layer)?;
    let mut pass = model.record(x, true)?;
    let n = pass.tape.value(pass.logits).shape()[0];
    if n != 1 {
        return Err(Error::dim("grad_cam", "batch", 1, n));
    }
    let a = pass.activations[layer];
    let logit = pass.tape.gather(pass.logits, &[class])?;
    pass.tape.backward(logit)?;
    let act = pass.tape.value(a);
    let (c, h, w) = (act.shape()[1], act.shape()[2], act.shape()[3]);
    let grad = pass
        .tape
        .grad(a)
        .expect("activation lies on the path to the logit");
    let map = grad_cam_map(act.data(), grad, c, h, w);
    let s = model.spec().input_shape;
    let up = upsample_bilinear(&map, h, w, s.height, s.width);
    Ok(Heatmap {
        values: Tensor::new(vec![s.height, s.width], normalize_unit(&up))?,
        source: HeatmapSource::GradCam,
    })
}

/// Per-pixel `sqrt(Σ_c (final − start)²)` before normalization.
pub fn diff_magnitude(start: &Tensor, end: &Tensor) -> Result<Tensor> {
    if start.shape() != end.shape() {
        let axis = start
            .shape()
            .iter()
            .zip(end.shape())
            .position(|(a, b)| a != b)
            .unwrap_or(0);
        return Err(Error::dim(
            "diff_heatmap",
            format!("axis {axis}"),
            start.shape()[axis],
            end.shape().get(axis).copied().unwrap_or(0),
        ));
    }
    let [c, h, w] = *start.shape() else {
        return Err(Error::dim("diff_heatmap", "rank", 3, start.rank()));
    };
    let hw = h * w;
    let (a, b) = (start.data(), end.data());
    let data = (0..hw)
        .map(|i| {
            (0..c)
                .map(|ch| (b[ch * hw + i] - a[ch * hw + i]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Tensor::new(vec![h, w], data)
}

pub fn diff_heatmap(start: &Tensor, end: &Tensor) -> Result<Heatmap> {
    let raw = diff_magnitude(start, end)?;
    let shape = raw.shape().to_vec();
    Ok(Heatmap {
        values: Tensor::new(shape, normalize_unit(raw.data()))?,
        source: HeatmapSource::Diff,
    })
}

/// The image with its brightness scaled by `0.25 + 0.75·heat`.
pub fn overlay(image: &Tensor, heat: &Heatmap) -> Result<Tensor> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::dim("overlay", "rank", 3, image.rank()));
    };
    if heat.values.shape() != [h, w] {
        return Err(Error::dim("overlay", "height", h, heat.values.shape()[0]));
    }
    let hv = heat.values.data();
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        image.data()[i] * (0.25 + 0.75 * hv[i % (h * w)])
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub start_prediction: usize,
    pub target_class: usize,
    pub flip_epoch: Option<usize>,
    pub budget_epochs: usize,
    pub lr: f64,
    /// L2 norm of `final − start`.
    pub diff_energy: f64,
    /// `flip_epoch / budget_epochs` if the prediction flipped, else 1.
    pub score: f64,
}

/// Ascends the target logit without regularizers or jitter and scores how
/// much of the budget the image survives.
pub fn robustness(
    model: &Model,
    x: &Tensor,
    target_class: usize,
    lr: f64,
    budget_epochs: usize,
) -> Result<RobustnessReport> {
    if budget_epochs == 0 {
        return Err(Error::Usage(
            "robustness budget must be at least one epoch".into(),
        ));
    }
    let objective = Objective::single(LayerAddress::Presoftmax {
        class: target_class,
    });
    objective.validate(model)?;
    let start_prediction = argmax(model.logits(x)?.data());
    if start_prediction == target_class {
        return Err(Error::Usage(format!(
            "image is already predicted as target class {target_class}"
        )));
    }
    let cfg = AscentConfig {
        lr,
        epochs: budget_epochs,
        seed: 0,
        jitter: None,
        clamp_to_data_range: false,
    };
    let trace = ascend(model, &objective, &RegularizerConfig::default(), &cfg, x)?;
    let score = match trace.flip_epoch {
        Some(e) => e as f64 / budget_epochs as f64,
        None => 1.0,
    };
    Ok(RobustnessReport {
        start_prediction,
        target_class,
        flip_epoch: trace.flip_epoch,
        budget_epochs,
        lr,
        diff_energy: trace.diff_energy(),
        score,
    })
}
