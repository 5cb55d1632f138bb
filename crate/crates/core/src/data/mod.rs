//! Labeled images, dataset statistics and category subsets.

mod cifar;
pub mod csv;
mod image;
mod noise;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use cifar::{
    decode_batch, encode_batch, load_cifar10, read_batch_file, write_batch_file, Split,
    RECORD_BYTES,
};
pub use image::{encode_pgm, encode_ppm, read_pnm, write_pgm, write_ppm, Render};
pub use noise::gaussian_noise_images;

/// CIFAR-10 category names in label order.
pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Resolves a CIFAR-10 category name (or its numeric label) to the label.
pub fn cifar_label(name: &str) -> Option<usize> {
    let lower = name.to_ascii_lowercase();
    let alias = match lower.as_str() {
        "plane" => "airplane",
        "car" => "automobile",
        other => other,
    };
    CIFAR10_CLASSES
        .iter()
        .position(|&c| c == alias)
        .or_else(|| lower.parse().ok().filter(|&i: &usize| i < 10))
}

/// An RGB image with pixels in `[0, 1]`, stored channel-major as `[3, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor,
    pub label: usize,
    pub source_id: String,
}

impl LabeledImage {
    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

/// Per-channel mean and standard deviation used to normalize network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub channel_mean: [f64; 3],
    pub channel_std: [f64; 3],
}

impl DatasetStats {
    pub fn new(channel_mean: [f64; 3], channel_std: [f64; 3]) -> Result<Self> {
        if channel_std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Usage(format!(
                "channel std must be positive, got {channel_std:?}"
            )));
        }
        Ok(Self {
            channel_mean,
            channel_std,
        })
    }

    /// Mean 0.5 / std 0.25 placeholder for models built before any data is seen.
    pub fn neutral() -> Self {
        Self {
            channel_mean: [0.5; 3],
            channel_std: [0.25; 3],
        }
    }

    /// Population statistics over every pixel of every image.
    pub fn from_images(images: &[LabeledImage]) -> Result<Self> {
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        let mut count = 0usize;
        for img in images {
            let hw = img.height() * img.width();
            for (c, plane) in img.pixels.data().chunks_exact(hw).enumerate() {
                sum[c] += plane.iter().sum::<f64>();
                sq[c] += plane.iter().map(|v| v * v).sum::<f64>();
            }
            count += hw;
        }
        if count == 0 {
            return Err(Error::Usage(
                "cannot compute statistics of an empty dataset".into(),
            ));
        }
        let n = count as f64;
        let mean = sum.map(|s| s / n);
        let mut std = [0.0; 3];
        for c in 0..3 {
            std[c] = (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt();
        }
        Self::new(mean, std)
    }

    pub fn normalize(&self, pixels: &Tensor) -> Tensor {
        self.map_channels(pixels, |c, v| {
            (v - self.channel_mean[c]) / self.channel_std[c]
        })
    }

    pub fn denormalize(&self, values: &Tensor) -> Tensor {
        self.map_channels(values, |c, v| {
            v * self.channel_std[c] + self.channel_mean[c]
        })
    }

    fn map_channels(&self, t: &Tensor, f: impl Fn(usize, f64) -> f64) -> Tensor {
        let hw: usize = t.shape()[t.rank() - 2..].iter().product();
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| f((k / hw) % 3, v))
            .collect();
        Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
    }
}

/// Keeps the images whose label is in `keep`, relabelled through `relabel`.
///
/// `relabel` must map exactly the kept labels onto `0..keep.len()`.
pub fn subset(
    images: &[LabeledImage],
    keep: &BTreeSet<usize>,
    relabel: &BTreeMap<usize, usize>,
) -> Result<Vec<LabeledImage>> {
    let keys: BTreeSet<usize> = relabel.keys().copied().collect();
    if &keys != keep {
        return Err(Error::Usage(format!(
            "relabel map covers {keys:?} but the kept labels are {keep:?}"
        )));
    }
    let targets: BTreeSet<usize> = relabel.values().copied().collect();
    if targets != (0..keep.len()).collect() {
        return Err(Error::Usage(format!(
            "relabel targets {targets:?} are not the contiguous range 0..{}",
            keep.len()
        )));
    }
    Ok(images
        .iter()
        .filter_map(|img| {
            relabel.get(&img.label).map(|&label| LabeledImage {
                label,
                ..img.clone()
            })
        })
        .collect())
}

/// Convenience for the common case: keep `labels` in the given order, relabelled 0, 1, ...
pub fn subset_ordered(images: &[LabeledImage], labels: &[usize]) -> Result<Vec<LabeledImage>> {
    let keep: BTreeSet<usize> = labels.iter().copied().collect();
    if keep.len() != labels.len() {
        return Err(Error::Usage(format!("duplicate labels in {labels:?}")));
    }
    let relabel = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    subset(images, &keep, &relabel)
}

/// Groups images by label, preserving dataset order within each group.
pub fn group_by_label(images: &[LabeledImage]) -> BTreeMap<usize, Vec<&LabeledImage>> {
    let mut groups: BTreeMap<usize, Vec<&LabeledImage>> = BTreeMap::new();
    for img in images {
        groups.entry(img.label).or_default().push(img);
    }
    groups
}
