use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, HashSet};

use crate::array::Array;
use crate::error::{dim_err, Result, TensorError};
use crate::tensor::Tensor;

/// A named trainable tensor.
///
/// Each value update installs a fresh graph leaf, so graphs recorded before
/// the update keep the value they were built with.
#[derive(Debug)]
pub struct Param {
    name: String,
    leaf: RefCell<Tensor>,
    frozen: Cell<bool>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Array) -> Self {
        Self {
            name: name.into(),
            leaf: RefCell::new(Tensor::param(value)),
            frozen: Cell::new(false),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The current leaf, or a detached constant while frozen.
    pub fn tensor(&self) -> Tensor {
        let leaf = self.leaf.borrow();
        if self.frozen.get() {
            leaf.detach()
        } else {
            leaf.clone()
        }
    }

    pub fn value(&self) -> Array {
        self.leaf.borrow().value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.leaf.borrow().shape().to_vec()
    }

    pub fn grad(&self) -> Option<Array> {
        self.leaf.borrow().grad()
    }

    pub fn zero_grad(&self) {
        self.leaf.borrow().zero_grad();
    }

    pub fn set_value(&self, value: Array) -> Result<()> {
        let shape = self.shape();
        if value.shape() != shape.as_slice() {
            return dim_err("Param::set_value", format!("{shape:?}"), format!("{:?}", value.shape()));
        }
        *self.leaf.borrow_mut() = Tensor::param(value);
        Ok(())
    }

    /// Substitutes an arbitrary tensor (e.g. a grad-check probe) for the leaf.
    pub fn replace_leaf(&self, t: Tensor) {
        *self.leaf.borrow_mut() = t;
    }

    pub fn set_frozen(&self, frozen: bool) {
        self.frozen.set(frozen);
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen.get()
    }
}

/// Anything that owns named parameters.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;

    fn zero_grad(&self) {
        for p in self.params() {
            p.zero_grad();
        }
    }

    fn set_frozen(&self, frozen: bool) {
        for p in self.params() {
            p.set_frozen(frozen);
        }
    }

    fn state(&self) -> Vec<(String, Array)> {
        self.params().iter().map(|p| (p.name().to_string(), p.value())).collect()
    }

    /// Loads values by name; every parameter must be present with a matching shape.
    fn load_state(&self, entries: &[(String, Array)]) -> Result<()> {
        let by_name: BTreeMap<&str, &Array> = entries.iter().map(|(n, a)| (n.as_str(), a)).collect();
        for p in self.params() {
            let value = by_name
                .get(p.name())
                .ok_or_else(|| TensorError::Format(format!("checkpoint is missing `{}`", p.name())))?;
            p.set_value((*value).clone())?;
        }
        Ok(())
    }
}

/// Fails if two parameters share a name.
pub fn check_unique_names(params: &[&Param]) -> Result<()> {
    let mut seen = HashSet::new();
    for p in params {
        if !seen.insert(p.name()) {
            return Err(TensorError::Config(format!("duplicate parameter name `{}`", p.name())));
        }
    }
    Ok(())
}
