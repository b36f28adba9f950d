use rayon::prelude::*;

use crate::array::Array;
use crate::error::{dim_err, Result, TensorError};
use crate::tensor::{is_grad_enabled, Op, Tensor};

const PAR_THRESHOLD: usize = 1 << 15;

/// Below this output width rows are formed as dot products against `b^T`.
const NARROW_OUTPUT: usize = 8;

pub(crate) fn matmul_data(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    if n < NARROW_OUTPUT && k >= 2 * NARROW_OUTPUT {
        return matmul_narrow(a, b, m, k, n);
    }
    let mut out = vec![0.0; m * n];
    let row = |(i, c): (usize, &mut [f64])| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `[rows, cols]` row-major to `[cols, rows]`.
fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

fn matmul_narrow(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let bt = transpose(b, k, n);
    let mut out = vec![0.0; m * n];
    let row = |(i, c): (usize, &mut [f64])| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, cv) in c.iter_mut().enumerate() {
            *cv = arow.iter().zip(&bt[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum();
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

struct Matmul;

impl Op for Matmul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let ga = if a.requires_grad() { Some(g.matmul(&b.transpose()?)?) } else { None };
        let gb = if b.requires_grad() { Some(a.transpose()?.matmul(g)?) } else { None };
        Ok(vec![ga, gb])
    }
}

struct SoftmaxRows;

impl Op for SoftmaxRows {
    fn name(&self) -> &'static str {
        "softmax_rows"
    }

    fn backward(&self, _inputs: &[Tensor], y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let gy = g.mul(y)?;
        let row_sums = gy.sum_to_axis(0)?;
        Ok(vec![Some(gy.sub(&y.mul_axis(&row_sums, 0)?)?)])
    }
}

impl Tensor {
    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return dim_err(
                "matmul",
                "two rank-2 tensors",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            );
        };
        if k != k2 {
            return dim_err("matmul", format!("inner dim {k}"), k2);
        }
        let value = Array::new([m, n], matmul_data(self.data(), other.data(), m, k, n))?;
        Ok(Tensor::from_op(value, Matmul, vec![self.clone(), other.clone()]))
    }

    /// Row-wise softmax of a `[m, n]` tensor, computed with max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        self.masked_softmax_rows(None)
    }

    /// Row-wise softmax where columns with `key_mask[j] == false` get exactly
    /// zero probability.
    pub fn masked_softmax_rows(&self, key_mask: Option<&[bool]>) -> Result<Tensor> {
        let &[m, n] = self.shape() else {
            return dim_err("softmax_rows", "rank 2", format!("{:?}", self.shape()));
        };
        if let Some(mask) = key_mask {
            if mask.len() != n {
                return dim_err("softmax_rows", format!("mask of length {n}"), mask.len());
            }
            if !mask.iter().any(|&v| v) {
                return Err(TensorError::Usage("softmax over an empty key set".into()));
            }
        }
        let valid = |j: usize| key_mask.is_none_or(|mask| mask[j]);
        let mut out = vec![0.0; m * n];
        let x = self.data();
        let kernel = |(i, row): (usize, &mut [f64])| {
            let xr = &x[i * n..(i + 1) * n];
            let max = (0..n).filter(|&j| valid(j)).map(|j| xr[j]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..n {
                if valid(j) {
                    let e = (xr[j] - max).exp();
                    row[j] = e;
                    total += e;
                }
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        };
        if m * n >= PAR_THRESHOLD {
            out.par_chunks_mut(n).enumerate().for_each(kernel);
        } else {
            out.chunks_mut(n).enumerate().for_each(kernel);
        }
        Ok(Tensor::from_op(Array::new([m, n], out)?, SoftmaxRows, vec![self.clone()]))
    }

    /// Scaled dot-product attention `softmax_rows(scale * q k^T) v` with
    /// optional key masking.
    ///
    /// When a graph would be recorded this composes the primitive ops, so all
    /// gradient orders stay available. Otherwise a fused kernel walks one
    /// query row at a time without materializing the `[n, m]` probability
    /// matrix. It repeats the primitive kernels' arithmetic in the same order,
    /// so both paths give bit-identical values.
    pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, scale: f64, key_mask: Option<&[bool]>) -> Result<Tensor> {
        let (&[n, d], &[m, d2], &[m2, dv]) = (q.shape(), k.shape(), v.shape()) else {
            return dim_err(
                "attention",
                "rank-2 queries, keys and values",
                format!("{:?}, {:?}, {:?}", q.shape(), k.shape(), v.shape()),
            );
        };
        if d != d2 || m != m2 {
            return dim_err("attention", format!("keys [{m}, {d}] and values [{m}, _]"), format!("{:?}, {:?}", k.shape(), v.shape()));
        }
        let recorded = is_grad_enabled() && [q, k, v].iter().any(|t| t.requires_grad());
        if recorded {
            return q.matmul(&k.transpose()?)?.scale(scale).masked_softmax_rows(key_mask)?.matmul(v);
        }
        if let Some(mask) = key_mask {
            if mask.len() != m {
                return dim_err("softmax_rows", format!("mask of length {m}"), mask.len());
            }
            if !mask.iter().any(|&b| b) {
                return Err(TensorError::Usage("softmax over an empty key set".into()));
            }
        }
        let valid = |j: usize| key_mask.is_none_or(|mask| mask[j]);
        let (qd, kd, vd) = (q.data(), k.data(), v.data());
        let narrow_scores = m < NARROW_OUTPUT && d >= 2 * NARROW_OUTPUT;
        let narrow_readout = dv < NARROW_OUTPUT && m >= 2 * NARROW_OUTPUT;
        let vt = if narrow_readout { transpose(vd, m, dv) } else { Vec::new() };
        let mut out = vec![0.0; n * dv];
        let kernel = |row: &mut Vec<f64>, (i, o): (usize, &mut [f64])| {
            let qr = &qd[i * d..(i + 1) * d];
            row.iter_mut().for_each(|x| *x = 0.0);
            if narrow_scores {
                for (j, x) in row.iter_mut().enumerate() {
                    *x = qr.iter().zip(&kd[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum();
                }
            } else {
                for (p, &a) in qr.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (j, x) in row.iter_mut().enumerate() {
                        *x += a * kd[j * d + p];
                    }
                }
            }
            row.iter_mut().for_each(|x| *x *= scale);
            let max = (0..m).filter(|&j| valid(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (j, x) in row.iter_mut().enumerate() {
                if valid(j) {
                    *x = (*x - max).exp();
                    total += *x;
                } else {
                    *x = 0.0;
                }
            }
            row.iter_mut().for_each(|x| *x /= total);
            if narrow_readout {
                for (c, ov) in o.iter_mut().enumerate() {
                    *ov = row.iter().zip(&vt[c * m..(c + 1) * m]).map(|(x, y)| x * y).sum();
                }
            } else {
                for (j, &pj) in row.iter().enumerate() {
                    if pj == 0.0 {
                        continue;
                    }
                    for (ov, &vv) in o.iter_mut().zip(&vd[j * dv..(j + 1) * dv]) {
                        *ov += pj * vv;
                    }
                }
            }
        };
        if n * m >= PAR_THRESHOLD && n > 1 {
            out.par_chunks_mut(dv).enumerate().for_each_init(|| vec![0.0; m], kernel);
        } else {
            let mut row = vec![0.0; m];
            out.chunks_mut(dv).enumerate().for_each(|x| kernel(&mut row, x));
        }
        Ok(Tensor::constant(Array::new([n, dv], out)?))
    }

    /// Normalizes every row of `[m, n]` to zero mean and unit variance
    /// (no learned gain or bias).
    pub fn layer_norm_rows(&self, eps: f64) -> Result<Tensor> {
        let &[_, n] = self.shape() else {
            return dim_err("layer_norm_rows", "rank 2", format!("{:?}", self.shape()));
        };
        let inv_n = 1.0 / n as f64;
        let mean = self.sum_to_axis(0)?.scale(inv_n);
        let centered = self.sub(&mean.broadcast_axis(0, self.shape())?)?;
        let var = centered.square().sum_to_axis(0)?.scale(inv_n);
        let inv_std = var.add_scalar(eps).powf(-0.5);
        centered.mul_axis(&inv_std, 0)
    }
}
