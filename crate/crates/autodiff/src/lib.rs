//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Operations on [`Tensor`] record themselves into an implicit tape; a scalar
//! root can then be differentiated with [`backward`] (accumulating into leaf
//! grad buffers) or [`grad`] (functional, optionally building a graph of the
//! gradient for second-order terms such as gradient penalties).
//!
//! Broadcasting is explicit: scalar-with-tensor ([`Tensor::mul_scalar`],
//! [`Tensor::broadcast_scalar`]) and per-axis vectors ([`Tensor::add_axis`],
//! [`Tensor::mul_axis`]). Nothing else broadcasts.

mod array;
mod checkpoint;
mod error;
mod gradcheck;
mod ops;
mod optim;
mod param;
mod tape;
mod tensor;

pub use array::Array;
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_report, GradCheckReport, REL_ERR_FLOOR};
pub use ops::{conv2d_input_grad, conv2d_kernel_grad, softplus, SampleGrid};
pub use optim::Adam;
pub use param::{check_unique_names, Param, Parameterized};
pub use tape::{backward, grad};
pub use tensor::{is_grad_enabled, no_grad, set_grad_enabled, GradModeGuard, Op, Tensor};
