use std::rc::Rc;

use rayon::prelude::*;

use crate::array::Array;
use crate::error::{dim_err, Result, TensorError};
use crate::tensor::{Op, Tensor};

#[derive(Clone, Copy, Debug)]
struct Tap2 {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    tx: f64,
    ty: f64,
}

/// Precomputed bilinear taps of a point set on an `H x W` grid.
///
/// A coordinate pair `(a, b)` in `[-1, 1]^2` addresses the column axis with
/// `a` and the row axis with `b`; `-1` and `1` land exactly on the first and
/// last sample (align-corners). Points outside the square are clamped.
#[derive(Clone, Debug)]
pub struct SampleGrid {
    h: usize,
    w: usize,
    taps: Rc<[Tap2]>,
}

fn axis_tap(c: f64, n: usize) -> (usize, usize, f64) {
    let mut u = (c.clamp(-1.0, 1.0) + 1.0) * 0.5 * (n - 1) as f64;
    let r = u.round();
    if (u - r).abs() < 1e-9 {
        u = r;
    }
    let lo = (u.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, u - lo as f64)
}

impl SampleGrid {
    pub fn new(h: usize, w: usize, coords: &[[f64; 2]]) -> Self {
        let taps = coords
            .iter()
            .map(|&[a, b]| {
                let (x0, x1, tx) = axis_tap(a, w);
                let (y0, y1, ty) = axis_tap(b, h);
                Tap2 { x0, x1, y0, y1, tx, ty }
            })
            .collect();
        Self { h, w, taps }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

struct BilinearGather {
    grid: SampleGrid,
}

impl Op for BilinearGather {
    fn name(&self) -> &'static str {
        "bilinear_gather"
    }

    fn backward(&self, _inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.bilinear_scatter(&self.grid)?)])
    }
}

struct BilinearScatter {
    grid: SampleGrid,
}

impl Op for BilinearScatter {
    fn name(&self) -> &'static str {
        "bilinear_scatter"
    }

    fn backward(&self, _inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.bilinear_sample(&self.grid)?)])
    }
}

struct Gather {
    indices: Rc<[usize]>,
}

impl Op for Gather {
    fn name(&self) -> &'static str {
        "gather"
    }

    fn backward(&self, inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.scatter_add(&self.indices, inputs[0].shape())?)])
    }
}

struct ScatterAdd {
    indices: Rc<[usize]>,
}

impl Op for ScatterAdd {
    fn name(&self) -> &'static str {
        "scatter_add"
    }

    fn backward(&self, _inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.gather(&self.indices)?)])
    }
}

impl Tensor {
    /// Samples a `[C, H, W]` plane at every grid point, giving `[N, C]`.
    pub fn bilinear_sample(&self, grid: &SampleGrid) -> Result<Tensor> {
        let &[c, h, w] = self.shape() else {
            return dim_err("bilinear_sample", "[C, H, W]", format!("{:?}", self.shape()));
        };
        if (h, w) != (grid.h, grid.w) {
            return dim_err("bilinear_sample", format!("{}x{}", grid.h, grid.w), format!("{h}x{w}"));
        }
        let plane = self.data();
        let mut out = vec![0.0; grid.len() * c];
        let taps: &[Tap2] = &grid.taps;
        out.par_chunks_mut(c).zip(taps.par_iter()).for_each(|(row, tap)| {
            for (ch, v) in row.iter_mut().enumerate() {
                let p = &plane[ch * h * w..];
                let a = p[tap.y0 * w + tap.x0];
                let b = p[tap.y0 * w + tap.x1];
                let cc = p[tap.y1 * w + tap.x0];
                let d = p[tap.y1 * w + tap.x1];
                let top = a + tap.tx * (b - a);
                let bottom = cc + tap.tx * (d - cc);
                *v = top + tap.ty * (bottom - top);
            }
        });
        let value = Array::new([grid.len(), c], out)?;
        Ok(Tensor::from_op(value, BilinearGather { grid: grid.clone() }, vec![self.clone()]))
    }

    /// Adjoint of [`Tensor::bilinear_sample`]: spreads `[N, C]` back onto `[C, H, W]`.
    pub fn bilinear_scatter(&self, grid: &SampleGrid) -> Result<Tensor> {
        let &[n, c] = self.shape() else {
            return dim_err("bilinear_scatter", "[N, C]", format!("{:?}", self.shape()));
        };
        if n != grid.len() {
            return dim_err("bilinear_scatter", grid.len(), n);
        }
        let (h, w) = (grid.h, grid.w);
        let g = self.data();
        let mut out = vec![0.0; c * h * w];
        let taps: &[Tap2] = &grid.taps;
        out.par_chunks_mut(h * w).enumerate().for_each(|(ch, plane)| {
            for (i, tap) in taps.iter().enumerate() {
                let v = g[i * c + ch];
                let (sx, sy) = (tap.tx, tap.ty);
                plane[tap.y0 * w + tap.x0] += (1.0 - sx) * (1.0 - sy) * v;
                plane[tap.y0 * w + tap.x1] += sx * (1.0 - sy) * v;
                plane[tap.y1 * w + tap.x0] += (1.0 - sx) * sy * v;
                plane[tap.y1 * w + tap.x1] += sx * sy * v;
            }
        });
        let value = Array::new([c, h, w], out)?;
        Ok(Tensor::from_op(value, BilinearScatter { grid: grid.clone() }, vec![self.clone()]))
    }

    /// Picks flat entries by index into a vector.
    pub fn gather(&self, indices: &Rc<[usize]>) -> Result<Tensor> {
        let data = self.data();
        if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
            return Err(TensorError::Usage(format!("gather index {bad} out of range {}", data.len())));
        }
        if indices.is_empty() {
            return Err(TensorError::Usage("gather with no indices".into()));
        }
        let value = Array::from_vec(indices.iter().map(|&i| data[i]).collect());
        Ok(Tensor::from_op(value, Gather { indices: indices.clone() }, vec![self.clone()]))
    }

    /// Adds vector entries into a zero tensor of `shape` at flat `indices`.
    pub fn scatter_add(&self, indices: &Rc<[usize]>, shape: &[usize]) -> Result<Tensor> {
        if self.len() != indices.len() {
            return dim_err("scatter_add", indices.len(), self.len());
        }
        let mut out = Array::zeros(shape.to_vec());
        if let Some(&bad) = indices.iter().find(|&&i| i >= out.len()) {
            return Err(TensorError::Usage(format!("scatter index {bad} out of range {}", out.len())));
        }
        let dst = out.data_mut();
        for (&i, &v) in indices.iter().zip(self.data()) {
            dst[i] += v;
        }
        Ok(Tensor::from_op(out, ScatterAdd { indices: indices.clone() }, vec![self.clone()]))
    }
}
