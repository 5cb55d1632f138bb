//! Random blur, translation and rotation of `[C, H, W]` gradient maps.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub max_translate_px: usize,
    pub max_rotate_deg: f64,
    pub blur_sigma: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            max_translate_px: 1,
            max_rotate_deg: 5.0,
            blur_sigma: 0.5,
        }
    }
}

impl Jitter {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotate_deg >= 0.0 && self.blur_sigma >= 0.0)
            || !self.max_rotate_deg.is_finite()
        {
            return Err(Error::Config(
                "jitter parameters must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Blur, then translate, then rotate `g` in place.
    pub fn apply(&self, g: &mut [f64], channels: usize, h: usize, w: usize, rng: &mut Rng) {
        if self.blur_sigma > 0.0 {
            gaussian_blur(g, channels, h, w, self.blur_sigma);
        }
        let m = self.max_translate_px as i64;
        let dx = rng.random_range(-m..=m);
        let dy = rng.random_range(-m..=m);
        translate(g, channels, h, w, dx, dy);
        let deg = if self.max_rotate_deg > 0.0 {
            rng.random_range(-self.max_rotate_deg..=self.max_rotate_deg)
        } else {
            0.0
        };
        if deg != 0.0 {
            rotate(g, channels, h, w, deg.to_radians());
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur; taps falling outside the image are dropped and
/// the remaining weights renormalized.
pub fn gaussian_blur(g: &mut [f64], channels: usize, h: usize, w: usize, sigma: f64) {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; g.len()];
    let pass = |src: &[f64], dst: &mut [f64], horizontal: bool| {
        for c in 0..channels {
            for y in 0..h {
                for x in 0..w {
                    let (mut acc, mut norm) = (0.0, 0.0);
                    for (t, kv) in kernel.iter().enumerate() {
                        let o = t as i64 - r;
                        let (sx, sy) = if horizontal {
                            (x as i64 + o, y as i64)
                        } else {
                            (x as i64, y as i64 + o)
                        };
                        if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                            continue;
                        }
                        acc += kv * src[(c * h + sy as usize) * w + sx as usize];
                        norm += kv;
                    }
                    dst[(c * h + y) * w + x] = acc / norm;
                }
            }
        }
    };
    pass(g, &mut tmp, true);
    pass(&tmp, g, false);
}

/// Shifts content by `(dx, dy)` pixels, filling uncovered pixels with zero.
pub fn translate(g: &mut [f64], channels: usize, h: usize, w: usize, dx: i64, dy: i64) {
    if dx == 0 && dy == 0 {
        return;
    }
    let src = g.to_vec();
    for c in 0..channels {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (sx, sy) = (x - dx, y - dy);
                g[(c * h + y as usize) * w + x as usize] =
                    if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                        0.0
                    } else {
                        src[(c * h + sy as usize) * w + sx as usize]
                    };
            }
        }
    }
}

/// Rotates each channel by `theta` radians about the image centre with
/// bilinear resampling; samples outside the source read as zero.
pub fn rotate(g: &mut [f64], channels: usize, h: usize, w: usize, theta: f64) {
    let src = g.to_vec();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = theta.sin_cos();
    let read = |c: usize, y: i64, x: i64| {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            src[(c * h + y as usize) * w + x as usize]
        }
    };
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                // Inverse map: where does output (x, y) come from.
                let (ux, uy) = (x as f64 - cx, y as f64 - cy);
                let sx = cos * ux + sin * uy + cx;
                let sy = -sin * ux + cos * uy + cy;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as i64, y0 as i64);
                g[(c * h + y) * w + x] = (1.0 - fy)
                    * ((1.0 - fx) * read(c, y0, x0) + fx * read(c, y0, x0 + 1))
                    + fy * ((1.0 - fx) * read(c, y0 + 1, x0) + fx * read(c, y0 + 1, x0 + 1));
            }
        }
    }
}
