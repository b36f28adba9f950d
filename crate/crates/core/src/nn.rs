//! Dense layers shared by the mapping network, decoders and discriminators.

use rand::Rng;
use tpa3d_autodiff::{Array, Param, Tensor};

use crate::error::Result;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Unit normal scaled by `1/sqrt(fan_in)`.
pub fn fan_in_normal(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut impl Rng) -> Array {
    Array::randn(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}

/// `y = x W + b` on row batches `[n x in]`.
#[derive(Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), fan_in_normal([fan_in, fan_out], fan_in, rng)),
            bias: Param::new(format!("{name}.bias"), Array::zeros([fan_out])),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.tensor())?.add_axis(&self.bias.tensor(), 1)?)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

/// Linear layers with leaky ReLU between them and a linear output.
#[derive(Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`.
    pub fn new(name: &str, widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = h.leaky_relu(LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Linear::params).collect()
    }
}
