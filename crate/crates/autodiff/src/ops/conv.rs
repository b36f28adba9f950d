//! Same-padded stride-1 2-D convolution, 2x average pooling and align-corners
//! bilinear upsampling, each paired with its adjoint so that gradients of
//! gradients stay inside the op set.

use rayon::prelude::*;

use crate::array::Array;
use crate::error::{dim_err, Result, TensorError};
use crate::tensor::{Op, Tensor};

fn chw(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => dim_err(op, "[C, H, W]", format!("{:?}", t.shape())),
    }
}

/// Output rows `lo..hi` for which `y + d - pad` lands inside `0..n`.
fn valid_range(n: usize, d: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(d);
    let hi = (n + pad).saturating_sub(d).min(n);
    (lo, hi.max(lo))
}

fn conv_forward(x: &[f64], k: &[f64], ci: usize, co: usize, h: usize, w: usize, kk: usize) -> Vec<f64> {
    let pad = kk / 2;
    let hw = h * w;
    let mut out = vec![0.0; co * hw];
    out.par_chunks_mut(hw).enumerate().for_each(|(o, out_o)| {
        for i in 0..ci {
            let xi = &x[i * hw..(i + 1) * hw];
            for dy in 0..kk {
                let (y0, y1) = valid_range(h, dy, pad);
                for dx in 0..kk {
                    let wv = k[((o * ci + i) * kk + dy) * kk + dx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = valid_range(w, dx, pad);
                    for y in y0..y1 {
                        let sy = y + dy - pad;
                        let dst = &mut out_o[y * w + x0..y * w + x1];
                        let src = &xi[sy * w + x0 + dx - pad..sy * w + x1 + dx - pad];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv_input_grad(gy: &[f64], k: &[f64], ci: usize, co: usize, h: usize, w: usize, kk: usize) -> Vec<f64> {
    let pad = kk / 2;
    let hw = h * w;
    let mut out = vec![0.0; ci * hw];
    out.par_chunks_mut(hw).enumerate().for_each(|(i, gx_i)| {
        for o in 0..co {
            let go = &gy[o * hw..(o + 1) * hw];
            for dy in 0..kk {
                let (y0, y1) = valid_range(h, dy, pad);
                for dx in 0..kk {
                    let wv = k[((o * ci + i) * kk + dy) * kk + dx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = valid_range(w, dx, pad);
                    for y in y0..y1 {
                        let sy = y + dy - pad;
                        let dst = &mut gx_i[sy * w + x0 + dx - pad..sy * w + x1 + dx - pad];
                        let src = &go[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv_kernel_grad(x: &[f64], gy: &[f64], ci: usize, co: usize, h: usize, w: usize, kk: usize) -> Vec<f64> {
    let pad = kk / 2;
    let hw = h * w;
    let mut out = vec![0.0; co * ci * kk * kk];
    out.par_chunks_mut(ci * kk * kk).enumerate().for_each(|(o, gk_o)| {
        let go = &gy[o * hw..(o + 1) * hw];
        for i in 0..ci {
            let xi = &x[i * hw..(i + 1) * hw];
            for dy in 0..kk {
                let (y0, y1) = valid_range(h, dy, pad);
                for dx in 0..kk {
                    let (x0, x1) = valid_range(w, dx, pad);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + dy - pad;
                        let a = &go[y * w + x0..y * w + x1];
                        let b = &xi[sy * w + x0 + dx - pad..sy * w + x1 + dx - pad];
                        acc += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
                    }
                    gk_o[(i * kk + dy) * kk + dx] = acc;
                }
            }
        }
    });
    out
}

struct Conv2d;

impl Op for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (x, k) = (&inputs[0], &inputs[1]);
        let gx = if x.requires_grad() { Some(conv2d_input_grad(g, k)?) } else { None };
        let gk = if k.requires_grad() { Some(conv2d_kernel_grad(x, g, k.shape()[2])?) } else { None };
        Ok(vec![gx, gk])
    }
}

struct ConvInputGrad;

impl Op for ConvInputGrad {
    fn name(&self) -> &'static str {
        "conv2d_input_grad"
    }

    fn backward(&self, inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (gy, k) = (&inputs[0], &inputs[1]);
        let d_gy = if gy.requires_grad() { Some(g.conv2d(k)?) } else { None };
        let d_k = if k.requires_grad() { Some(conv2d_kernel_grad(g, gy, k.shape()[2])?) } else { None };
        Ok(vec![d_gy, d_k])
    }
}

struct ConvKernelGrad;

impl Op for ConvKernelGrad {
    fn name(&self) -> &'static str {
        "conv2d_kernel_grad"
    }

    fn backward(&self, inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (x, gy) = (&inputs[0], &inputs[1]);
        let d_x = if x.requires_grad() { Some(conv2d_input_grad(gy, g)?) } else { None };
        let d_gy = if gy.requires_grad() { Some(x.conv2d(g)?) } else { None };
        Ok(vec![d_x, d_gy])
    }
}

/// Vector-Jacobian product of `conv2d` with respect to its input.
pub fn conv2d_input_grad(gy: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (co, h, w) = chw(gy, "conv2d_input_grad")?;
    let &[kco, ci, kk, _] = kernel.shape() else {
        return dim_err("conv2d_input_grad", "rank-4 kernel", format!("{:?}", kernel.shape()));
    };
    if kco != co {
        return dim_err("conv2d_input_grad", co, kco);
    }
    let data = conv_input_grad(gy.data(), kernel.data(), ci, co, h, w, kk);
    let value = Array::new([ci, h, w], data)?;
    Ok(Tensor::from_op(value, ConvInputGrad, vec![gy.clone(), kernel.clone()]))
}

/// Vector-Jacobian product of `conv2d` with respect to its kernel.
pub fn conv2d_kernel_grad(x: &Tensor, gy: &Tensor, kernel_size: usize) -> Result<Tensor> {
    let (ci, h, w) = chw(x, "conv2d_kernel_grad")?;
    let (co, h2, w2) = chw(gy, "conv2d_kernel_grad")?;
    if (h, w) != (h2, w2) {
        return dim_err("conv2d_kernel_grad", format!("{h}x{w}"), format!("{h2}x{w2}"));
    }
    let data = conv_kernel_grad(x.data(), gy.data(), ci, co, h, w, kernel_size);
    let value = Array::new([co, ci, kernel_size, kernel_size], data)?;
    Ok(Tensor::from_op(value, ConvKernelGrad, vec![x.clone(), gy.clone()]))
}

struct AvgPool2;

impl Op for AvgPool2 {
    fn name(&self) -> &'static str {
        "avg_pool2"
    }

    fn backward(&self, _inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.avg_pool2_adjoint()?)])
    }
}

struct AvgPool2Adjoint;

impl Op for AvgPool2Adjoint {
    fn name(&self) -> &'static str {
        "avg_pool2_adjoint"
    }

    fn backward(&self, _inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.avg_pool2()?)])
    }
}

/// Source taps of one output coordinate under the align-corners convention.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    t: f64,
}

fn taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    (0..n_out)
        .map(|j| {
            let src = if n_out == 1 { 0.0 } else { j as f64 * (n_in - 1) as f64 / (n_out - 1) as f64 };
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            Tap { lo, hi, t: src - lo as f64 }
        })
        .collect()
}

fn upsample_data(x: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h * f, w * f);
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut out = vec![0.0; c * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(ch, dst)| {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let mut rows = vec![0.0; h * ow];
        for y in 0..h {
            for (xo, tap) in tx.iter().enumerate() {
                let a = src[y * w + tap.lo];
                let b = src[y * w + tap.hi];
                rows[y * ow + xo] = a + tap.t * (b - a);
            }
        }
        for (yo, tap) in ty.iter().enumerate() {
            for xo in 0..ow {
                let a = rows[tap.lo * ow + xo];
                let b = rows[tap.hi * ow + xo];
                dst[yo * ow + xo] = a + tap.t * (b - a);
            }
        }
    });
    out
}

fn upsample_adjoint_data(g: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h * f, w * f);
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut out = vec![0.0; c * h * w];
    out.par_chunks_mut(h * w).enumerate().for_each(|(ch, dst)| {
        let src = &g[ch * oh * ow..(ch + 1) * oh * ow];
        let mut rows = vec![0.0; h * ow];
        for (yo, tap) in ty.iter().enumerate() {
            for xo in 0..ow {
                let v = src[yo * ow + xo];
                rows[tap.lo * ow + xo] += (1.0 - tap.t) * v;
                rows[tap.hi * ow + xo] += tap.t * v;
            }
        }
        for y in 0..h {
            for (xo, tap) in tx.iter().enumerate() {
                let v = rows[y * ow + xo];
                dst[y * w + tap.lo] += (1.0 - tap.t) * v;
                dst[y * w + tap.hi] += tap.t * v;
            }
        }
    });
    out
}

struct Upsample {
    factor: usize,
}

impl Op for Upsample {
    fn name(&self) -> &'static str {
        "bilinear_upsample"
    }

    fn backward(&self, _inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.bilinear_upsample_adjoint(self.factor)?)])
    }
}

struct UpsampleAdjoint {
    factor: usize,
}

impl Op for UpsampleAdjoint {
    fn name(&self) -> &'static str {
        "bilinear_upsample_adjoint"
    }

    fn backward(&self, _inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.bilinear_upsample(self.factor)?)])
    }
}

impl Tensor {
    /// Same-padded, stride-1 convolution of `[C_in, H, W]` with an odd-sized
    /// `[C_out, C_in, k, k]` kernel.
    pub fn conv2d(&self, kernel: &Tensor) -> Result<Tensor> {
        let (ci, h, w) = chw(self, "conv2d")?;
        let &[co, kci, kk, kk2] = kernel.shape() else {
            return dim_err("conv2d", "rank-4 kernel", format!("{:?}", kernel.shape()));
        };
        if kk != kk2 || kk % 2 == 0 {
            return Err(TensorError::Config(format!(
                "conv2d needs a square odd kernel, got {kk}x{kk2}"
            )));
        }
        if kci != ci {
            return dim_err("conv2d", format!("{ci} input channels"), kci);
        }
        let data = conv_forward(self.data(), kernel.data(), ci, co, h, w, kk);
        let value = Array::new([co, h, w], data)?;
        Ok(Tensor::from_op(value, Conv2d, vec![self.clone(), kernel.clone()]))
    }

    /// 2x2 average pooling of `[C, H, W]` with even `H` and `W`.
    pub fn avg_pool2(&self) -> Result<Tensor> {
        let (c, h, w) = chw(self, "avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return dim_err("avg_pool2", "even spatial dims", format!("{h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let base = ch * h * w + 2 * y * w + 2 * xo;
                    out[(ch * oh + y) * ow + xo] = 0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
                }
            }
        }
        let value = Array::new([c, oh, ow], out)?;
        Ok(Tensor::from_op(value, AvgPool2, vec![self.clone()]))
    }

    pub fn avg_pool2_adjoint(&self) -> Result<Tensor> {
        let (c, oh, ow) = chw(self, "avg_pool2_adjoint")?;
        let (h, w) = (oh * 2, ow * 2);
        let g = self.data();
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let v = 0.25 * g[(ch * oh + y) * ow + xo];
                    let base = ch * h * w + 2 * y * w + 2 * xo;
                    out[base] = v;
                    out[base + 1] = v;
                    out[base + w] = v;
                    out[base + w + 1] = v;
                }
            }
        }
        let value = Array::new([c, h, w], out)?;
        Ok(Tensor::from_op(value, AvgPool2Adjoint, vec![self.clone()]))
    }

    /// Bilinear upsampling of `[C, H, W]` by an integer factor with the
    /// align-corners convention: output sample `j` reads input coordinate
    /// `j * (n_in - 1) / (n_out - 1)`, so corner samples are reproduced exactly.
    /// A factor of 1 returns the input values unchanged.
    pub fn bilinear_upsample(&self, factor: usize) -> Result<Tensor> {
        let (c, h, w) = chw(self, "bilinear_upsample")?;
        if factor < 1 {
            return Err(TensorError::Config("upsample factor must be >= 1".into()));
        }
        if factor == 1 {
            return self.reshape(&[c, h, w]);
        }
        let value = Array::new([c, h * factor, w * factor], upsample_data(self.data(), c, h, w, factor))?;
        Ok(Tensor::from_op(value, Upsample { factor }, vec![self.clone()]))
    }

    /// Adjoint (transpose) of [`Tensor::bilinear_upsample`].
    pub fn bilinear_upsample_adjoint(&self, factor: usize) -> Result<Tensor> {
        let (c, oh, ow) = chw(self, "bilinear_upsample_adjoint")?;
        if factor < 1 || oh % factor != 0 || ow % factor != 0 {
            return Err(TensorError::Config(format!("bad adjoint factor {factor} for {oh}x{ow}")));
        }
        if factor == 1 {
            return self.reshape(&[c, oh, ow]);
        }
        let (h, w) = (oh / factor, ow / factor);
        let value = Array::new([c, h, w], upsample_adjoint_data(self.data(), c, h, w, factor))?;
        Ok(Tensor::from_op(value, UpsampleAdjoint { factor }, vec![self.clone()]))
    }
}
