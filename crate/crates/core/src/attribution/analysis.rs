use std::collections::BTreeMap;

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::model::{batch_of, LayerAddress, Model, EVAL_BATCH};
use crate::tensor::argmax;

/// Score of `address` for every image, in dataset order.
pub fn activation_scores(
    model: &Model,
    images: &[LabeledImage],
    address: &LayerAddress,
) -> Result<Vec<f64>> {
    address.validate(model)?;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let refs: Vec<&LabeledImage> = chunk.iter().collect();
        let (logits, acts) = model.forward_with_activations(&batch_of(&refs)?)?;
        out.extend(address.scores(&logits, &acts)?);
    }
    Ok(out)
}

/// The `k` highest `(id, score)` pairs, descending, ties by id ascending.
pub fn rank_scores(ids: &[&str], scores: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
    if k > ids.len() {
        return Err(Error::Usage(format!(
            "k = {k} exceeds the {} available images",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| ids[a].cmp(ids[b]))
    });
    Ok(order[..k]
        .iter()
        .map(|&i| (ids[i].to_string(), scores[i]))
        .collect())
}

pub fn top_k_activating(
    model: &Model,
    images: &[LabeledImage],
    address: &LayerAddress,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if k > images.len() {
        return Err(Error::Usage(format!(
            "k = {k} exceeds the {} available images",
            images.len()
        )));
    }
    let scores = activation_scores(model, images, address)?;
    let ids: Vec<&str> = images.iter().map(|i| i.source_id.as_str()).collect();
    rank_scores(&ids, &scores, k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]` of `scores`; every bin is half-open
/// except the last. When all scores are equal, the first bin holds them all.
pub fn histogram(scores: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::Usage("histogram needs at least one bin".into()));
    }
    if scores.is_empty() {
        return Ok(Vec::new());
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: lo + i as f64 * width,
            hi: if i + 1 == bins {
                hi
            } else {
                lo + (i + 1) as f64 * width
            },
            count: 0,
        })
        .collect();
    for &s in scores {
        let i = if width > 0.0 {
            (((s - lo) / width).floor() as usize).min(bins - 1)
        } else {
            0
        };
        out[i].count += 1;
    }
    Ok(out)
}

pub fn activation_histogram(
    model: &Model,
    images: &[LabeledImage],
    address: &LayerAddress,
    bins: usize,
) -> Result<Vec<HistogramBin>> {
    histogram(&activation_scores(model, images, address)?, bins)
}

/// Predictions of one out-of-sample image set.
#[derive(Debug, Clone, PartialEq)]
pub struct OosRow {
    pub name: String,
    pub count: usize,
    /// Percentage of images predicted as each trained class.
    pub percentages: Vec<f64>,
    /// Mean over images of `w_c · x`, the pooled-feature part of each logit.
    pub mean_wx: Vec<f64>,
    /// The fully connected bias `b_c` of each logit.
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OosTable {
    pub class_names: Vec<String>,
    pub rows: Vec<OosRow>,
}

/// Classifies every out-of-sample set (rows in key order).
pub fn oos_table(
    model: &Model,
    class_names: &[String],
    datasets: &BTreeMap<String, Vec<LabeledImage>>,
) -> Result<OosTable> {
    let k = model.num_classes();
    if class_names.len() != k {
        return Err(Error::Usage(format!(
            "{} class names for a {k}-class model",
            class_names.len()
        )));
    }
    let weight = model.param("fc.weight").expect("model has a head");
    let bias = model
        .param("fc.bias")
        .expect("model has a head")
        .data()
        .to_vec();
    let features = weight.shape()[1];
    let mut rows = Vec::with_capacity(datasets.len());
    for (name, images) in datasets {
        if images.is_empty() {
            return Err(Error::Usage(format!("out-of-sample set `{name}` is empty")));
        }
        let mut counts = vec![0usize; k];
        let mut wx_sum = vec![0.0; k];
        for chunk in images.chunks(EVAL_BATCH) {
            let refs: Vec<&LabeledImage> = chunk.iter().collect();
            let (logits, acts) = model.forward_with_activations(&batch_of(&refs)?)?;
            for row in logits.data().chunks_exact(k) {
                counts[argmax(row)] += 1;
            }
            let a = &acts["layer4"];
            let hw = a.shape()[2] * a.shape()[3];
            for img in a.data().chunks_exact(features * hw) {
                let pooled: Vec<f64> = img
                    .chunks_exact(hw)
                    .map(|p| p.iter().sum::<f64>() / hw as f64)
                    .collect();
                for (c, w_row) in weight.data().chunks_exact(features).enumerate() {
                    wx_sum[c] += w_row.iter().zip(&pooled).map(|(w, x)| w * x).sum::<f64>();
                }
            }
        }
        let n = images.len() as f64;
        rows.push(OosRow {
            name: name.clone(),
            count: images.len(),
            percentages: counts.iter().map(|&c| 100.0 * c as f64 / n).collect(),
            mean_wx: wx_sum.iter().map(|s| s / n).collect(),
            bias: bias.clone(),
        });
    }
    Ok(OosTable {
        class_names: class_names.to_vec(),
        rows,
    })
}
