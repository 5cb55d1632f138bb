use rand_distr::{Distribution, Normal};

use super::{DatasetStats, LabeledImage};
use crate::rng::substream;
use crate::tensor::Tensor;

/// `n` images of independent per-pixel Gaussian noise with the given
/// per-channel mean and std, clamped to `[0, 1]`.
pub fn gaussian_noise_images(
    stats: &DatasetStats,
    n: usize,
    height: usize,
    width: usize,
    label: usize,
    seed: u64,
) -> Vec<LabeledImage> {
    let mut rng = substream(seed, "noise");
    let dists: Vec<Normal<f64>> = (0..3)
        .map(|c| {
            Normal::new(stats.channel_mean[c], stats.channel_std[c])
                .expect("std validated positive")
        })
        .collect();
    let hw = height * width;
    (0..n)
        .map(|i| {
            let pixels = Tensor::from_fn(&[3, height, width], |k| {
                dists[k / hw].sample(&mut rng).clamp(0.0, 1.0)
            });
            LabeledImage {
                pixels,
                label,
                source_id: format!("noise:{i}"),
            }
        })
        .collect()
}
