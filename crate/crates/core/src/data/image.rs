//! Binary PPM (P6) and PGM (P5) encoding, maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How tensor values become bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Render {
    /// Values are pixels in `[0, 1]`; anything outside is clamped.
    Clamp,
    /// The tensor's `[min, max]` maps linearly onto `[0, 255]`; a constant
    /// tensor renders as all zeros.
    Normalize,
}

fn quantize(values: &[f64], render: Render) -> Result<Vec<u8>> {
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Usage(format!(
            "cannot render non-finite value {bad}"
        )));
    }
    Ok(match render {
        Render::Clamp => values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
        Render::Normalize => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                vec![0; values.len()]
            } else {
                values
                    .iter()
                    .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
                    .collect()
            }
        }
    })
}

fn spatial(t: &Tensor, channels: usize) -> Result<(usize, usize)> {
    match (channels, t.shape()) {
        (3, [3, h, w]) | (1, [1, h, w]) | (1, [h, w]) => Ok((*h, *w)),
        (c, s) => Err(Error::dim(
            if c == 3 { "ppm" } else { "pgm" },
            "channels",
            c,
            if s.len() == 3 { s[0] } else { 0 },
        )),
    }
}

/// Encodes a `[3, H, W]` tensor as P6, interleaving the channel planes.
pub fn encode_ppm(pixels: &Tensor, render: Render) -> Result<Vec<u8>> {
    let (h, w) = spatial(pixels, 3)?;
    let planar = quantize(pixels.data(), render)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let hw = h * w;
    for i in 0..hw {
        out.extend([planar[i], planar[hw + i], planar[2 * hw + i]]);
    }
    Ok(out)
}

/// Encodes an `[H, W]` (or `[1, H, W]`) tensor as P5.
pub fn encode_pgm(gray: &Tensor, render: Render) -> Result<Vec<u8>> {
    let (h, w) = spatial(gray, 1)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(quantize(gray.data(), render)?);
    Ok(out)
}

pub fn write_ppm(pixels: &Tensor, path: &Path, render: Render) -> Result<()> {
    let bytes = encode_ppm(pixels, render)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(gray: &Tensor, path: &Path, render: Render) -> Result<()> {
    let bytes = encode_pgm(gray, render)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a P5/P6 file with maxval 255 into `[C, H, W]` with values in `[0, 1]`.
pub fn read_pnm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, path)
}

fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, Some(pos as u64), "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let channels = match fields[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        other => {
            return Err(Error::format(
                path,
                Some(0),
                format!("unsupported magic {other:?}"),
            ))
        }
    };
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, None, format!("bad header field {s:?}")))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::format(
            path,
            None,
            format!("maxval {maxval} unsupported"),
        ));
    }
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < channels * w * h {
        return Err(Error::format(
            path,
            Some(bytes.len() as u64),
            "truncated raster",
        ));
    }
    let hw = h * w;
    let data = (0..channels * hw)
        .map(|k| {
            let (c, i) = (k / hw, k % hw);
            raster[i * channels + c] as f64 / 255.0
        })
        .collect();
    Tensor::new(vec![channels, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_black_pixel() {
        let bytes = encode_ppm(&Tensor::zeros(&[3, 1, 1]), Render::Clamp).unwrap();
        assert_eq!(bytes, b"P6\n1 1\n255\n\0\0\0");
        assert_eq!(bytes.len(), 14);
    }

    #[test]
    fn normalized_constant_is_zero() {
        let bytes = encode_pgm(&Tensor::full(&[2, 3], 0.7), Render::Normalize).unwrap();
        assert!(bytes[bytes.len() - 6..].iter().all(|&b| b == 0));
    }

    #[test]
    fn normalize_spans_full_range() {
        let t = Tensor::new(vec![1, 3], vec![-2.0, 0.0, 2.0]).unwrap();
        let bytes = encode_pgm(&t, Render::Normalize).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    }

    #[test]
    fn write_then_read_is_quantization_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let t = Tensor::from_fn(&[3, 4, 5], |i| ((i * 37) % 101) as f64 / 100.0);
        write_ppm(&t, &path, Render::Clamp).unwrap();
        let back = read_pnm(&path).unwrap();
        assert!(back.max_abs_diff(&t) <= 0.5 / 255.0 + 1e-12);
        let path2 = dir.path().join("y.ppm");
        write_ppm(&back, &path2, Render::Clamp).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_wrong_channel_count() {
        assert!(encode_ppm(&Tensor::zeros(&[1, 2, 2]), Render::Clamp).is_err());
        assert!(encode_ppm(
            &Tensor::new(vec![3, 1, 1], vec![f64::NAN, 0.0, 0.0]).unwrap(),
            Render::Clamp
        )
        .is_err());
    }
}
