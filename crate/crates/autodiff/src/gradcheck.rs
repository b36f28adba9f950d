use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::tape::grad;
use crate::tensor::{no_grad, Tensor};

/// Denominator guard of the relative error.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

fn eval_scalar(f: &impl Fn(&Tensor) -> Result<Tensor>, x: Tensor) -> Result<Tensor> {
    let y = f(&x)?;
    if y.len() != 1 {
        return Err(TensorError::Usage(format!("grad_check needs a scalar function, got {:?}", y.shape())));
    }
    if !y.item().is_finite() {
        return Err(TensorError::Evaluation(format!("f(x) is not finite: {}", y.item())));
    }
    Ok(y)
}

/// Maximum over entries of `|analytic - numeric| / (|numeric| + 1e-8)`, where
/// the numeric gradient uses central differences with step `eps`.
pub fn grad_check(f: impl Fn(&Tensor) -> Result<Tensor>, x: &Array, eps: f64) -> Result<f64> {
    let indices: Vec<usize> = (0..x.len()).collect();
    Ok(grad_check_report(f, x, eps, &indices)?.max_rel_err)
}

/// [`grad_check`] restricted to the given flat indices; the returned vectors
/// follow `indices` order.
pub fn grad_check_report(
    f: impl Fn(&Tensor) -> Result<Tensor>,
    x: &Array,
    eps: f64,
    indices: &[usize],
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(TensorError::Config(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let leaf = Tensor::param(x.clone());
    let y = eval_scalar(&f, leaf.clone())?;
    let full = grad(&y, &[&leaf], false)?
        .pop()
        .flatten()
        .map(|g| g.value().clone())
        .unwrap_or_else(|| Array::zeros(x.shape().to_vec()));

    let _guard = no_grad();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: indices.first().copied().unwrap_or(0),
        analytic: Vec::with_capacity(indices.len()),
        numeric: Vec::with_capacity(indices.len()),
    };
    for &i in indices {
        if i >= x.len() {
            return Err(TensorError::Usage(format!("grad_check index {i} out of range")));
        }
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let fp = eval_scalar(&f, Tensor::constant(plus))?.item();
        let fm = eval_scalar(&f, Tensor::constant(minus))?.item();
        let numeric = (fp - fm) / (2.0 * eps);
        let analytic = full.data()[i];
        let err = (analytic - numeric).abs() / (numeric.abs() + REL_ERR_FLOOR);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
        }
        report.analytic.push(analytic);
        report.numeric.push(numeric);
    }
    Ok(report)
}
