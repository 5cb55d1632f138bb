//! Procedural stand-in for CIFAR-10 with a planted category structure.
//!
//! Ten classes share the CIFAR-10 names and label order. Vehicles are flat,
//! untextured shapes over sky/road/sea backgrounds; animals are striped
//! ellipses over natural backgrounds. Cat and dog share background, shape
//! and palette and differ only in stripe direction (horizontal against
//! vertical, which survives mirroring) and a slight colour shift. A
//! fraction of each is rendered with the other's cues, so the pair is
//! learnable but not perfectly separable.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::LabeledImage;
use crate::rng::{substream, Rng as StreamRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse,
    Box,
    Wedge,
}

#[derive(Debug, Clone, Copy)]
struct Style {
    background: [f64; 3],
    foreground: [f64; 3],
    shape: Shape,
    size: f64,
    /// Stripe direction (radians) and frequency (cycles per image width).
    stripes: Option<(f64, f64)>,
    /// Class whose colour and stripe cues are borrowed for confusable samples.
    partner: Option<usize>,
}

const STYLES: [Style; 10] = [
    // airplane
    Style {
        background: [0.55, 0.70, 0.90],
        foreground: [0.82, 0.82, 0.86],
        shape: Shape::Wedge,
        size: 0.55,
        stripes: None,
        partner: None,
    },
    // automobile
    Style {
        background: [0.45, 0.45, 0.45],
        foreground: [0.80, 0.20, 0.20],
        shape: Shape::Box,
        size: 0.50,
        stripes: None,
        partner: Some(9),
    },
    // bird
    Style {
        background: [0.60, 0.75, 0.85],
        foreground: [0.75, 0.65, 0.30],
        shape: Shape::Ellipse,
        size: 0.35,
        stripes: Some((PI / 3.0, 7.0)),
        partner: None,
    },
    // cat
    Style {
        background: [0.50, 0.42, 0.32],
        foreground: [0.78, 0.56, 0.34],
        shape: Shape::Ellipse,
        size: 0.60,
        stripes: Some((0.0, 4.0)),
        partner: Some(5),
    },
    // deer
    Style {
        background: [0.32, 0.52, 0.26],
        foreground: [0.62, 0.46, 0.30],
        shape: Shape::Ellipse,
        size: 0.55,
        stripes: Some((0.0, 3.0)),
        partner: Some(7),
    },
    // dog
    Style {
        background: [0.50, 0.42, 0.32],
        foreground: [0.70, 0.50, 0.36],
        shape: Shape::Ellipse,
        size: 0.60,
        stripes: Some((PI / 2.0, 4.0)),
        partner: Some(3),
    },
    // frog
    Style {
        background: [0.36, 0.46, 0.20],
        foreground: [0.30, 0.62, 0.22],
        shape: Shape::Ellipse,
        size: 0.40,
        stripes: Some((PI / 6.0, 9.0)),
        partner: None,
    },
    // horse
    Style {
        background: [0.40, 0.50, 0.30],
        foreground: [0.46, 0.30, 0.20],
        shape: Shape::Ellipse,
        size: 0.65,
        stripes: Some((PI / 2.0, 3.0)),
        partner: Some(4),
    },
    // ship
    Style {
        background: [0.20, 0.35, 0.70],
        foreground: [0.86, 0.86, 0.80],
        shape: Shape::Box,
        size: 0.60,
        stripes: None,
        partner: None,
    },
    // truck
    Style {
        background: [0.50, 0.50, 0.50],
        foreground: [0.30, 0.40, 0.80],
        shape: Shape::Box,
        size: 0.62,
        stripes: None,
        partner: Some(1),
    },
];

/// Generation parameters.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    pub per_class: usize,
    /// Probability that an image with a confusable partner class borrows
    /// the partner's colour and stripe cues.
    pub confusion: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            per_class: 100,
            confusion: 0.12,
            seed: 0,
        }
    }
}

fn inside(shape: Shape, dx: f64, dy: f64, size: f64) -> bool {
    match shape {
        Shape::Ellipse => (dx / (0.6 * size)).powi(2) + (dy / (0.42 * size)).powi(2) <= 1.0,
        Shape::Box => dx.abs() <= 0.55 * size && dy.abs() <= 0.28 * size,
        Shape::Wedge => {
            // Triangle pointing right, base on the left.
            let t = (dx + 0.5 * size) / size;
            (0.0..=1.0).contains(&t) && dy.abs() <= 0.4 * size * (1.0 - t)
        }
    }
}

fn render(label: usize, cfg: &SyntheticConfig, rng: &mut StreamRng) -> Tensor {
    let own = STYLES[label];
    let cue = match own.partner {
        Some(p) if rng.random::<f64>() < cfg.confusion => STYLES[p],
        _ => own,
    };
    let jitter = Normal::new(0.0, 0.06).unwrap();
    let pixel_noise = Normal::new(0.0, 0.05).unwrap();
    let bg: Vec<f64> = own
        .background
        .iter()
        .map(|c| c + jitter.sample(rng))
        .collect();
    let fg: Vec<f64> = cue
        .foreground
        .iter()
        .map(|c| c + jitter.sample(rng))
        .collect();
    let cx = rng.random_range(0.35..0.65);
    let cy = rng.random_range(0.35..0.65);
    let size = own.size * rng.random_range(0.8..1.2);
    let phase = rng.random_range(0.0..2.0 * PI);
    let angle_jitter = rng.random_range(-0.15..0.15);

    let (h, w) = (cfg.height, cfg.width);
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        let v = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64;
            let color: [f64; 3] = if inside(own.shape, u - cx, v - cy, size) {
                let m = match cue.stripes {
                    Some((theta, freq)) => {
                        let t = theta + angle_jitter;
                        0.7 + 0.3 * (2.0 * PI * freq * (u * t.cos() + v * t.sin()) + phase).sin()
                    }
                    None => 1.0,
                };
                [fg[0] * m, fg[1] * m, fg[2] * m]
            } else {
                let shade = 0.85 + 0.3 * v;
                [bg[0] * shade, bg[1] * shade, bg[2] * shade]
            };
            for c in 0..3 {
                data[(c * h + y) * w + x] = (color[c] + pixel_noise.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("shape matches data")
}

/// Generates `per_class` images of each of the ten classes, interleaved by
/// label. `split` names the substream and prefixes every `source_id`.
pub fn generate(cfg: &SyntheticConfig, split: &str) -> Vec<LabeledImage> {
    let mut rng = substream(cfg.seed, &format!("synthetic/{split}"));
    let mut out = Vec::with_capacity(10 * cfg.per_class);
    for i in 0..cfg.per_class {
        for label in 0..10 {
            out.push(LabeledImage {
                pixels: render(label, cfg, &mut rng),
                label,
                source_id: format!("{split}:{}", i * 10 + label),
            });
        }
    }
    out
}
