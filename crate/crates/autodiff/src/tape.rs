//! Reverse-mode traversal over the recorded graph.
//!
//! The tape is implicit: every recorded node holds its op and inputs, and ids
//! are assigned in creation order. A backward pass collects the nodes
//! reachable from the root, visits them once each in descending id order and
//! pushes vector-Jacobian products to their inputs.

use std::collections::HashMap;

use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::tensor::{set_grad_enabled, Tensor};

fn reachable(root: &Tensor) -> Vec<Tensor> {
    let mut seen: HashMap<u64, Tensor> = HashMap::new();
    let mut stack = vec![root.clone()];
    while let Some(t) = stack.pop() {
        if !t.requires_grad() || seen.contains_key(&t.id()) {
            continue;
        }
        if let Some(gf) = t.grad_fn() {
            stack.extend(gf.inputs.iter().filter(|i| i.requires_grad()).cloned());
        }
        seen.insert(t.id(), t);
    }
    let mut nodes: Vec<Tensor> = seen.into_values().collect();
    nodes.sort_by_key(|t| std::cmp::Reverse(t.id()));
    nodes
}

fn check_scalar(root: &Tensor) -> Result<()> {
    if root.len() != 1 {
        return Err(TensorError::Usage(format!(
            "backward needs a scalar root, got shape {:?}",
            root.shape()
        )));
    }
    Ok(())
}

/// Runs the reverse sweep and returns the gradient of every visited node.
fn sweep(root: &Tensor, create_graph: bool) -> Result<HashMap<u64, Tensor>> {
    check_scalar(root)?;
    let nodes = reachable(root);
    let _mode = set_grad_enabled(create_graph);
    let mut grads: HashMap<u64, Tensor> = HashMap::new();
    if !root.requires_grad() {
        return Ok(grads);
    }
    grads.insert(root.id(), Tensor::constant(Array::ones(root.shape().to_vec())));
    let mut out = HashMap::new();
    for node in nodes {
        let Some(g) = grads.remove(&node.id()) else { continue };
        if let Some(gf) = node.grad_fn() {
            if create_graph && !gf.op.higher_order() {
                return Err(TensorError::Usage(format!(
                    "op `{}` does not support higher-order gradients",
                    gf.op.name()
                )));
            }
            let input_grads = gf.op.backward(&gf.inputs, &node, &g)?;
            debug_assert_eq!(input_grads.len(), gf.inputs.len(), "{}", gf.op.name());
            for (input, ig) in gf.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.requires_grad() {
                    continue;
                }
                if ig.shape() != input.shape() {
                    return Err(TensorError::Dimension {
                        op: gf.op.name(),
                        expected: format!("{:?}", input.shape()),
                        got: format!("{:?}", ig.shape()),
                    });
                }
                let acc = match grads.remove(&input.id()) {
                    Some(prev) => prev.add(&ig)?,
                    None => ig,
                };
                grads.insert(input.id(), acc);
            }
        }
        out.insert(node.id(), g);
    }
    Ok(out)
}

/// Accumulates `d root / d leaf` into the grad buffer of every reachable leaf
/// that requires grad. Repeated calls add up; use [`Tensor::zero_grad`] to reset.
pub fn backward(root: &Tensor) -> Result<()> {
    let grads = sweep(root, false)?;
    for_each_leaf(root, |leaf| {
        if let Some(g) = grads.get(&leaf.id()) {
            leaf.accumulate_grad(g.value())?;
        }
        Ok(())
    })
}

fn for_each_leaf(root: &Tensor, mut f: impl FnMut(&Tensor) -> Result<()>) -> Result<()> {
    for t in reachable(root) {
        if t.is_leaf() {
            f(&t)?;
        }
    }
    Ok(())
}

/// Functional gradient of a scalar `root` with respect to `wrt`, leaving grad
/// buffers untouched. With `create_graph` the returned tensors are themselves
/// part of the graph and can be differentiated again.
pub fn grad(root: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Option<Tensor>>> {
    let grads = sweep(root, create_graph)?;
    Ok(wrt.iter().map(|t| grads.get(&t.id()).cloned()).collect())
}
