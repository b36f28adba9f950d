use std::collections::HashMap;

use crate::array::Array;
use crate::error::Result;
use crate::param::Param;

/// Adam with bias correction. State is keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: HashMap<String, u64>,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, steps: HashMap::new(), moments: HashMap::new() }
    }

    /// Updates every parameter that holds a gradient, then clears the gradients.
    pub fn step(&mut self, params: &[&Param]) -> Result<()> {
        for p in params {
            let Some(g) = p.grad() else { continue };
            let t = self.steps.entry(p.name().to_string()).or_insert(0);
            *t += 1;
            let t = *t as i32;
            let (m, v) = self
                .moments
                .entry(p.name().to_string())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let mut value = p.value();
            for (((x, gi), mi), vi) in value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.set_value(value)?;
        }
        Ok(())
    }

    /// Moment buffers, for checkpointing or inspection.
    pub fn moments(&self, name: &str) -> Option<(Array, Array)> {
        self.moments
            .get(name)
            .map(|(m, v)| (Array::from_vec(m.clone()), Array::from_vec(v.clone())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::backward;

    #[test]
    fn first_step_moves_each_entry_by_lr() {
        let p = Param::new("w", Array::from_vec(vec![1.0, -2.0]));
        backward(&p.tensor().square().sum()).unwrap();
        let mut adam = Adam::new(0.1, 0.9, 0.999);
        adam.step(&[&p]).unwrap();
        let v = p.value();
        assert!((v.data()[0] - 0.9).abs() < 1e-6);
        assert!((v.data()[1] + 1.9).abs() < 1e-6);
        assert!(p.grad().is_none(), "a fresh leaf carries no gradient");
    }

    #[test]
    fn minimizes_a_quadratic() {
        let p = Param::new("w", Array::from_vec(vec![3.0, -4.0, 0.5]));
        let mut adam = Adam::new(0.05, 0.9, 0.999);
        for _ in 0..2000 {
            backward(&p.tensor().square().sum()).unwrap();
            adam.step(&[&p]).unwrap();
        }
        assert!(p.value().max_abs() < 1e-2);
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let p = Param::new("w", Array::ones([2]));
        p.set_frozen(true);
        let x = crate::Tensor::param(Array::ones([2]));
        backward(&p.tensor().mul(&x).unwrap().sum()).unwrap();
        assert!(p.grad().is_none());
        assert!(x.grad().is_some());
    }
}
