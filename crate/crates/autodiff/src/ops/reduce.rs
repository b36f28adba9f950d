use crate::array::{numel, Array};
use crate::error::{dim_err, Result};
use crate::tensor::{Op, Tensor};

/// (outer, dim, inner) split of `shape` around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct Sum;

impl Op for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.broadcast_scalar(inputs[0].shape())?)])
    }
}

struct BroadcastScalar;

impl Op for BroadcastScalar {
    fn name(&self) -> &'static str {
        "broadcast_scalar"
    }

    fn backward(&self, _inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.sum())])
    }
}

struct SumToAxis {
    axis: usize,
}

impl Op for SumToAxis {
    fn name(&self) -> &'static str {
        "sum_to_axis"
    }

    fn backward(&self, inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.broadcast_axis(self.axis, inputs[0].shape())?)])
    }
}

struct BroadcastAxis {
    axis: usize,
}

impl Op for BroadcastAxis {
    fn name(&self) -> &'static str {
        "broadcast_axis"
    }

    fn backward(&self, _inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.sum_to_axis(self.axis)?)])
    }
}

impl Tensor {
    /// Sum of all entries as a one-element tensor.
    pub fn sum(&self) -> Tensor {
        Tensor::from_op(Array::scalar(self.value().sum()), Sum, vec![self.clone()])
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.len() as f64)
    }

    /// Repeats a one-element tensor into `shape`.
    pub fn broadcast_scalar(&self, shape: &[usize]) -> Result<Tensor> {
        if self.len() != 1 {
            return dim_err("broadcast_scalar", 1, self.len());
        }
        let value = Array::full(shape.to_vec(), self.item());
        Ok(Tensor::from_op(value, BroadcastScalar, vec![self.clone()]))
    }

    /// Reduces every axis except `axis`, giving a vector of length `shape[axis]`.
    pub fn sum_to_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return dim_err("sum_to_axis", format!("axis < {}", shape.len()), axis);
        }
        let (outer, dim, inner) = axis_split(shape, axis);
        let mut out = vec![0.0; dim];
        let data = self.data();
        for o in 0..outer {
            for (a, acc) in out.iter_mut().enumerate() {
                let base = (o * dim + a) * inner;
                *acc += data[base..base + inner].iter().sum::<f64>();
            }
        }
        Ok(Tensor::from_op(Array::from_vec(out), SumToAxis { axis }, vec![self.clone()]))
    }

    /// Expands a vector along `axis` of `shape` (the vector's length must be `shape[axis]`).
    pub fn broadcast_axis(&self, axis: usize, shape: &[usize]) -> Result<Tensor> {
        if axis >= shape.len() || self.len() != shape[axis] || self.shape().len() != 1 {
            return dim_err(
                "broadcast_axis",
                format!("vector matching axis {axis} of {shape:?}"),
                format!("{:?}", self.shape()),
            );
        }
        let (outer, dim, inner) = axis_split(shape, axis);
        let mut out = Vec::with_capacity(numel(shape));
        let v = self.data();
        for _ in 0..outer {
            for &b in v.iter().take(dim) {
                out.extend(std::iter::repeat_n(b, inner));
            }
        }
        let value = Array::new(shape.to_vec(), out)?;
        Ok(Tensor::from_op(value, BroadcastAxis { axis }, vec![self.clone()]))
    }

    /// `x + b` with `b` indexed by `axis` (e.g. a per-channel or per-column bias).
    pub fn add_axis(&self, b: &Tensor, axis: usize) -> Result<Tensor> {
        self.add(&b.broadcast_axis(axis, self.shape())?)
    }

    /// `x * b` with `b` indexed by `axis`.
    pub fn mul_axis(&self, b: &Tensor, axis: usize) -> Result<Tensor> {
        self.mul(&b.broadcast_axis(axis, self.shape())?)
    }

    /// Multiplies every entry by a one-element tensor.
    pub fn mul_scalar(&self, s: &Tensor) -> Result<Tensor> {
        self.mul(&s.broadcast_scalar(self.shape())?)
    }

    /// Dot product of two equal-shape tensors.
    pub fn dot(&self, other: &Tensor) -> Result<Tensor> {
        Ok(self.mul(other)?.sum())
    }
}
