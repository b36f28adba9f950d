//! Three axis-aligned feature planes and their baseline aggregation.

use tpa3d_autodiff::{Array, Tensor};

use crate::error::{Error, Result};

/// Planes `xy`, `yz`, `xz`, each `[d x H x H]`.
#[derive(Clone, Debug)]
pub struct Triplane {
    pub xy: Tensor,
    pub yz: Tensor,
    pub xz: Tensor,
}

impl Triplane {
    pub fn new(xy: Tensor, yz: Tensor, xz: Tensor) -> Result<Self> {
        let s = xy.shape();
        if s.len() != 3 || s[1] != s[2] || yz.shape() != s || xz.shape() != s {
            return Err(Error::Usage(format!(
                "triplane planes must share one square [d, H, H] shape, got {:?}, {:?}, {:?}",
                s,
                yz.shape(),
                xz.shape()
            )));
        }
        Ok(Self { xy, yz, xz })
    }

    pub fn zeros(channels: usize, res: usize) -> Self {
        Self::constant([0.0; 3], channels, res)
    }

    /// Plane `i` filled with `values[i]`.
    pub fn constant(values: [f64; 3], channels: usize, res: usize) -> Self {
        let plane = |v| Tensor::constant(Array::full([channels, res, res], v));
        Self { xy: plane(values[0]), yz: plane(values[1]), xz: plane(values[2]) }
    }

    /// Splits `[3d x H x H]` into contiguous channel thirds (xy, yz, xz).
    pub fn from_stacked(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] % 3 != 0 {
            return Err(Error::Usage(format!("stacked triplane needs 3d channels, got {s:?}")));
        }
        let d = s[0] / 3;
        Self::new(t.narrow(0, 0, d)?, t.narrow(0, d, d)?, t.narrow(0, 2 * d, d)?)
    }

    pub fn stacked(&self) -> Result<Tensor> {
        Ok(Tensor::concat(&[self.xy.clone(), self.yz.clone(), self.xz.clone()], 0)?)
    }

    pub fn planes(&self) -> [&Tensor; 3] {
        [&self.xy, &self.yz, &self.xz]
    }

    pub fn channels(&self) -> usize {
        self.xy.shape()[0]
    }

    pub fn resolution(&self) -> usize {
        self.xy.shape()[1]
    }

    pub fn map(&self, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Self> {
        Self::new(f(&self.xy)?, f(&self.yz)?, f(&self.xz)?)
    }

    pub fn zip(&self, other: &Triplane, mut f: impl FnMut(&Tensor, &Tensor) -> Result<Tensor>) -> Result<Self> {
        Self::new(f(&self.xy, &other.xy)?, f(&self.yz, &other.yz)?, f(&self.xz, &other.xz)?)
    }

    pub fn add(&self, other: &Triplane) -> Result<Self> {
        self.zip(other, |a, b| Ok(a.add(b)?))
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        self.map(|p| Ok(p.scale(c)))
    }

    pub fn upsample(&self, factor: usize) -> Result<Self> {
        self.map(|p| Ok(p.bilinear_upsample(factor)?))
    }

    pub fn detach(&self) -> Self {
        Self { xy: self.xy.detach(), yz: self.yz.detach(), xz: self.xz.detach() }
    }

    /// Every value, plane by plane.
    pub fn values(&self) -> Vec<f64> {
        self.planes().iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    /// Euclidean norm of `self - other`.
    pub fn distance(&self, other: &Triplane) -> f64 {
        self.values().iter().zip(other.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// Upsample-and-sum of per-layer triplanes, in layer order.
///
/// Evaluated as `acc = up2(acc) + c_i`, the same recurrence the generator
/// follows when every attention block is the identity.
pub fn aggregate_sentence_triplanes(list: &[Triplane]) -> Result<Triplane> {
    let (first, rest) = list.split_first().ok_or_else(|| Error::Usage("no triplanes to aggregate".into()))?;
    let mut acc = first.clone();
    for c in rest {
        if c.resolution() != 2 * acc.resolution() {
            return Err(Error::Config(format!(
                "layer resolutions must double: {} then {}",
                acc.resolution(),
                c.resolution()
            )));
        }
        acc = acc.upsample(2)?.add(c)?;
    }
    Ok(acc)
}
