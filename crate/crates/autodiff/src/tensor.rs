use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::array::Array;
use crate::error::Result;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Restores the previous grad mode when dropped.
pub struct GradModeGuard {
    prev: bool,
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.prev));
    }
}

pub fn set_grad_enabled(enabled: bool) -> GradModeGuard {
    let prev = GRAD_ENABLED.with(|c| c.replace(enabled));
    GradModeGuard { prev }
}

/// Disables graph recording until the guard drops.
pub fn no_grad() -> GradModeGuard {
    set_grad_enabled(false)
}

/// Backward rule of a differentiable operation.
///
/// Implementations should express their vector-Jacobian products with
/// [`Tensor`] operations so that gradients can themselves be differentiated.
/// Fused kernels that compute the product directly must return `false` from
/// [`Op::higher_order`].
pub trait Op {
    fn name(&self) -> &'static str;

    fn higher_order(&self) -> bool {
        true
    }

    /// One entry per input; `None` means "no gradient flows to this input".
    fn backward(&self, inputs: &[Tensor], output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>>;
}

pub(crate) struct GradFn {
    pub(crate) op: Box<dyn Op>,
    pub(crate) inputs: Vec<Tensor>,
}

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) value: Array,
    pub(crate) requires_grad: bool,
    pub(crate) grad: RefCell<Option<Array>>,
    pub(crate) grad_fn: Option<GradFn>,
}

/// A node of the compute graph: an immutable value plus autodiff metadata.
///
/// Node ids grow monotonically with creation, so every node's inputs carry
/// smaller ids than the node itself; sorting by id is a topological order.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.op.name()))
            .finish()
    }
}

impl Tensor {
    fn from_node(value: Array, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        Tensor(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad,
            grad: RefCell::new(None),
            grad_fn,
        }))
    }

    /// A graph leaf. Gradients accumulate into it on [`crate::backward`].
    pub fn leaf(value: Array, requires_grad: bool) -> Self {
        Self::from_node(value, requires_grad, None)
    }

    pub fn param(value: Array) -> Self {
        Self::leaf(value, true)
    }

    pub fn constant(value: Array) -> Self {
        Self::leaf(value, false)
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(Array::scalar(value))
    }

    /// Records `value` as the output of `op` applied to `inputs`.
    ///
    /// Nothing is recorded when grad mode is off or no input requires grad.
    pub fn from_op(value: Array, op: impl Op + 'static, inputs: Vec<Tensor>) -> Self {
        let requires_grad = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn { op: Box::new(op), inputs });
        Self::from_node(value, requires_grad, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Array {
        &self.0.value
    }

    pub fn data(&self) -> &[f64] {
        self.0.value.data()
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn len(&self) -> usize {
        self.0.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.value.is_empty()
    }

    pub fn item(&self) -> f64 {
        self.0.value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Array> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// A constant sharing this tensor's value.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.0.value.clone())
    }

    pub(crate) fn grad_fn(&self) -> Option<&GradFn> {
        self.0.grad_fn.as_ref()
    }

    pub(crate) fn accumulate_grad(&self, g: &Array) -> Result<()> {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => existing.add_assign(g),
            None => {
                *slot = Some(g.clone());
                Ok(())
            }
        }
    }
}
