use crate::array::{numel, Array};
use crate::error::{dim_err, Result, TensorError};
use crate::ops::reduce::axis_split;
use crate::tensor::{Op, Tensor};

struct Reshape;

impl Op for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.reshape(inputs[0].shape())?)])
    }
}

struct Transpose;

impl Op for Transpose {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn backward(&self, _inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.transpose()?)])
    }
}

struct Narrow {
    axis: usize,
    start: usize,
}

impl Op for Narrow {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn backward(&self, inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let full = inputs[0].shape()[self.axis];
        Ok(vec![Some(g.pad_axis(self.axis, self.start, full)?)])
    }
}

struct PadAxis {
    axis: usize,
    start: usize,
    len: usize,
}

impl Op for PadAxis {
    fn name(&self) -> &'static str {
        "pad_axis"
    }

    fn backward(&self, _inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.narrow(self.axis, self.start, self.len)?)])
    }
}

struct Concat {
    axis: usize,
    sizes: Vec<usize>,
}

impl Op for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, _inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(self.sizes.len());
        for &len in &self.sizes {
            out.push(Some(g.narrow(self.axis, start, len)?));
            start += len;
        }
        Ok(out)
    }
}

pub(crate) fn transpose_data(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let value = self.value().reshape(shape.to_vec())?;
        Ok(Tensor::from_op(value, Reshape, vec![self.clone()]))
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let &[rows, cols] = self.shape() else {
            return dim_err("transpose", "rank 2", format!("{:?}", self.shape()));
        };
        let value = Array::new([cols, rows], transpose_data(self.data(), rows, cols))?;
        Ok(Tensor::from_op(value, Transpose, vec![self.clone()]))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return dim_err(
                "narrow",
                format!("range within axis {axis} of {shape:?}"),
                format!("{start}..{}", start + len),
            );
        }
        let (outer, dim, inner) = axis_split(shape, axis);
        let data = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = len;
        let value = Array::new(new_shape, out)?;
        Ok(Tensor::from_op(value, Narrow { axis, start }, vec![self.clone()]))
    }

    /// Zero-pads along `axis` so this tensor occupies `[start, start + len)` of a
    /// dimension of size `full`. Adjoint of [`Tensor::narrow`].
    pub fn pad_axis(&self, axis: usize, start: usize, full: usize) -> Result<Tensor> {
        let shape = self.shape();
        let len = shape[axis];
        if start + len > full {
            return dim_err("pad_axis", format!("<= {full}"), start + len);
        }
        let (outer, _, inner) = axis_split(shape, axis);
        let mut new_shape = shape.to_vec();
        new_shape[axis] = full;
        let mut out = vec![0.0; numel(&new_shape)];
        let data = self.data();
        for o in 0..outer {
            let src = o * len * inner;
            let dst = (o * full + start) * inner;
            out[dst..dst + len * inner].copy_from_slice(&data[src..src + len * inner]);
        }
        let value = Array::new(new_shape, out)?;
        Ok(Tensor::from_op(value, PadAxis { axis, start, len }, vec![self.clone()]))
    }

    /// Concatenates tensors that agree on every axis except `axis`.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Usage("concat of an empty list".into()))?;
        let base = first.shape();
        if axis >= base.len() {
            return dim_err("concat", format!("axis < {}", base.len()), axis);
        }
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return dim_err("concat", format!("{base:?}"), format!("{s:?}"));
            }
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let (outer, _, inner) = axis_split(base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&sizes) {
                let src = o * len * inner;
                out.extend_from_slice(&p.data()[src..src + len * inner]);
            }
        }
        let mut shape = base.to_vec();
        shape[axis] = total;
        let value = Array::new(shape, out)?;
        Ok(Tensor::from_op(value, Concat { axis, sizes }, parts.to_vec()))
    }
}
