//! Convolution and pooling over `[N, C, H, W]` tensors (zero padding only).

use super::ops::gemm;
use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn out_extent(
    op: &'static str,
    axis: &str,
    size: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Usage(format!("{op}: stride must be >= 1")));
    }
    if k == 0 || k > size + 2 * padding {
        return Err(Error::dim(op, axis, size + 2 * padding, k));
    }
    Ok((size + 2 * padding - k) / stride + 1)
}

/// Unrolls one sample's receptive fields into a `(C·kh·kw) × (oh·ow)` matrix.
fn im2col(x: &[f64], g: &Geometry, cols: &mut [f64]) {
    let ncols = g.cols();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let y = (oy * g.stride + i) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if y < 0 || y >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + y as usize) * g.w..][..g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let xx = (ox * g.stride + j) as isize - g.padding as isize;
                        *v = if xx < 0 || xx >= g.w as isize {
                            0.0
                        } else {
                            src[xx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geometry, dx: &mut [f64]) {
    let ncols = g.cols();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let y = (oy * g.stride + i) as isize - g.padding as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * g.h + y as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let xx = (ox * g.stride + j) as isize - g.padding as isize;
                        if xx >= 0 && xx < g.w as isize {
                            dst[xx as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn geometry(x: &[usize], w: &[usize], stride: usize, padding: usize) -> Result<Geometry> {
    if x.len() != 4 {
        return Err(Error::dim("conv2d", "input rank", 4, x.len()));
    }
    if w.len() != 4 {
        return Err(Error::dim("conv2d", "kernel rank", 4, w.len()));
    }
    if w[1] != x[1] {
        return Err(Error::dim("conv2d", "channels", x[1], w[1]));
    }
    let oh = out_extent("conv2d", "height", x[2], w[2], stride, padding)?;
    let ow = out_extent("conv2d", "width", x[3], w[3], stride, padding)?;
    Ok(Geometry {
        c: x[1],
        h: x[2],
        w: x[3],
        kh: w[2],
        kw: w[3],
        stride,
        padding,
        oh,
        ow,
    })
}

pub(super) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    out_shape: &[usize],
    g: &[f64],
    stride: usize,
    padding: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let geo = geometry(x.shape(), w.shape(), stride, padding).expect("validated in forward");
    let n = x.shape()[0];
    let k = out_shape[1];
    let (rows, ncols) = (geo.rows(), geo.cols());
    let sample = geo.c * geo.h * geo.w;

    let mut dx = vec![0.0; x.numel()];
    let mut dw = vec![0.0; w.numel()];
    let mut db = vec![0.0; k];
    let mut cols = vec![0.0; rows * ncols];
    let mut dcols = vec![0.0; rows * ncols];
    for s in 0..n {
        let gs = &g[s * k * ncols..(s + 1) * k * ncols];
        for (b, row) in db.iter_mut().zip(gs.chunks_exact(ncols)) {
            *b += row.iter().sum::<f64>();
        }
        im2col(&x.data()[s * sample..(s + 1) * sample], &geo, &mut cols);
        // dW += dY · colsᵀ
        gemm(
            gs,
            (k, ncols),
            false,
            &cols,
            (rows, ncols),
            true,
            &mut dw,
            1.0,
        );
        // dcols = Wᵀ · dY
        gemm(
            w.data(),
            (k, rows),
            true,
            gs,
            (k, ncols),
            false,
            &mut dcols,
            0.0,
        );
        col2im(&dcols, &geo, &mut dx[s * sample..(s + 1) * sample]);
    }
    (dx, dw, db)
}

pub(super) fn avgpool_backward(
    in_shape: &[usize],
    out_shape: &[usize],
    g: &[f64],
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let inv = 1.0 / (kernel * kernel) as f64;
    let mut dx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[(plane * oh + oy) * ow + ox] * inv;
                for i in 0..kernel {
                    for j in 0..kernel {
                        dx[(plane * h + oy * stride + i) * w + ox * stride + j] += gv;
                    }
                }
            }
        }
    }
    dx
}

fn pool_shape(
    op: &'static str,
    x: &Tensor,
    kernel: usize,
    stride: usize,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::dim(op, "rank", 4, x.rank()));
    }
    let s = x.shape();
    let oh = out_extent(op, "height", s[2], kernel, stride, 0)?;
    let ow = out_extent(op, "width", s[3], kernel, stride, 0)?;
    Ok((s[0], s[1], s[2], s[3], oh, ow))
}

impl Tape {
    /// 2-D cross-correlation with zero padding.
    ///
    /// `input: [N, C, H, W]`, `kernel: [K, C, kh, kw]`, `bias: [K]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(kernel);
        let geo = geometry(x.shape(), w.shape(), stride, padding)?;
        let n = x.shape()[0];
        let k = w.shape()[0];
        let bias_data = match bias {
            Some(b) => {
                let b = self.value(b);
                if b.numel() != k {
                    return Err(Error::dim("conv2d", "bias", k, b.numel()));
                }
                Some(b.data())
            }
            None => None,
        };
        let (rows, ncols) = (geo.rows(), geo.cols());
        let sample = geo.c * geo.h * geo.w;
        let mut out = vec![0.0; n * k * ncols];
        let mut cols = vec![0.0; rows * ncols];
        for s in 0..n {
            im2col(&x.data()[s * sample..(s + 1) * sample], &geo, &mut cols);
            let dst = &mut out[s * k * ncols..(s + 1) * k * ncols];
            if let Some(b) = bias_data {
                for (row, &bv) in dst.chunks_exact_mut(ncols).zip(b) {
                    row.iter_mut().for_each(|v| *v = bv);
                }
            }
            gemm(
                w.data(),
                (k, rows),
                false,
                &cols,
                (rows, ncols),
                false,
                dst,
                1.0,
            );
        }
        let out = Tensor::new(vec![n, k, geo.oh, geo.ow], out)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
        ))
    }

    /// Max pooling without padding; ties route the gradient to the first index.
    pub fn maxpool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w, oh, ow) = pool_shape("maxpool2d", x, kernel, stride)?;
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (plane * h + oy * stride) * w + ox * stride;
                    for i in 0..kernel {
                        for j in 0..kernel {
                            let idx = (plane * h + oy * stride + i) * w + ox * stride + j;
                            if x.data()[idx] > x.data()[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x.data()[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(out, Op::MaxPool { input, argmax }))
    }

    pub fn avgpool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w, oh, ow) = pool_shape("avgpool2d", x, kernel, stride)?;
        let inv = 1.0 / (kernel * kernel) as f64;
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for i in 0..kernel {
                        let row = (plane * h + oy * stride + i) * w + ox * stride;
                        acc += x.data()[row..row + kernel].iter().sum::<f64>();
                    }
                    out.push(acc * inv);
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(
            out,
            Op::AvgPool {
                input,
                kernel,
                stride,
            },
        ))
    }

    /// Averages each channel over its spatial extent: `[N, C, H, W] -> [N, C]`.
    pub fn global_avgpool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 4 {
            return Err(Error::dim("global_avgpool", "rank", 4, x.rank()));
        }
        let (n, c, hw) = (x.shape()[0], x.shape()[1], x.shape()[2] * x.shape()[3]);
        let data = x
            .data()
            .chunks_exact(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let out = Tensor::new(vec![n, c], data)?;
        Ok(self.push(out, Op::GlobalAvgPool { input }))
    }
}
