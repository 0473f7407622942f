use std::collections::{HashMap, HashSet};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Backward graph reachable from a root, in topological order (every node's
/// inputs precede it; the root is last). Only tensors carrying a backward node
/// are listed; tracked leaves are reached through their consumers.
pub struct GradTape<T: Real> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Real> GradTape<T> {
    pub fn from_root(root: &Tensor<T>) -> Self {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        // iterative post-order DFS; deep graphs must not blow the stack
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if t.node().is_none() || !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.node() {
                for inp in node.inputs.iter().rev() {
                    if inp.node().is_some() && !seen.contains(&inp.id()) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }
        GradTape { nodes: order }
    }

    pub fn nodes(&self) -> &[Tensor<T>] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Checks the ordering invariant: each node appears after all of its
    /// tracked inputs.
    pub fn is_topological(&self) -> bool {
        let pos: HashMap<usize, usize> = self.nodes.iter().enumerate().map(|(i, t)| (t.id(), i)).collect();
        self.nodes.iter().enumerate().all(|(i, t)| {
            t.node().is_none_or(|n| {
                n.inputs
                    .iter()
                    .filter(|inp| inp.node().is_some())
                    .all(|inp| pos.get(&inp.id()).is_some_and(|&j| j < i))
            })
        })
    }
}

pub(super) fn backward<T: Real>(loss: &Tensor<T>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::NonScalarLoss(loss.shape().to_vec()));
    }
    if !loss.requires_grad() {
        return Err(Error::NotOnTape);
    }
    if loss.is_leaf() {
        loss.accumulate_grad(&[T::one()]);
        return Ok(());
    }

    let tape = GradTape::from_root(loss);
    let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
    pending.insert(loss.id(), vec![T::one()]);
    // per-pass totals are added to the leaf buffers once at the end, so a
    // repeated pass adds exactly the same vector again
    let mut leaf_grads: HashMap<usize, (Tensor<T>, Vec<T>)> = HashMap::new();

    for t in tape.nodes.iter().rev() {
        let Some(g) = pending.remove(&t.id()) else {
            continue;
        };
        let node = t.node().expect("tape holds only op outputs");
        let grads = (node.backward)(&g);
        debug_assert_eq!(grads.len(), node.inputs.len(), "op {}", node.op);
        for (inp, gi) in node.inputs.iter().zip(grads) {
            let Some(gi) = gi else { continue };
            if !inp.requires_grad() {
                continue;
            }
            debug_assert_eq!(gi.len(), inp.numel(), "op {}", node.op);
            if inp.is_leaf() {
                match leaf_grads.get_mut(&inp.id()) {
                    Some((_, acc)) => {
                        for (a, v) in acc.iter_mut().zip(gi) {
                            *a += v;
                        }
                    }
                    None => {
                        leaf_grads.insert(inp.id(), (inp.clone(), gi));
                    }
                }
            } else {
                match pending.get_mut(&inp.id()) {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(gi) {
                            *a += v;
                        }
                    }
                    None => {
                        pending.insert(inp.id(), gi);
                    }
                }
            }
        }
    }
    for (leaf, g) in leaf_grads.into_values() {
        leaf.accumulate_grad(&g);
    }
    Ok(())
}
