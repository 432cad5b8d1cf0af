use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Gradient rule of one forward op.
///
/// `needs[i]` tells whether parent `i` requires a gradient; implementations
/// may return `None` for parents that don't, and must return tensors shaped
/// like the corresponding parent otherwise.
pub(crate) trait GradFn {
    fn grads(
        &self,
        grad_out: &Tensor,
        parents: &[Var],
        value: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: RefCell<Option<Tensor>>,
    parents: Vec<Var>,
    grad_fn: Option<Box<dyn GradFn>>,
}

/// A tensor tracked by the autodiff graph.
///
/// Leaves are created with [`Var::param`] (trainable) or [`Var::constant`]
/// (frozen); every op in [`crate::nn::ops`] produces a derived `Var` that
/// remembers its parents. Calling [`Var::backward`] on a scalar populates
/// `grad` on every trainable leaf it was computed from; frozen leaves
/// propagate gradient through to their own ancestors but never store one.
#[derive(Clone)]
pub struct Var {
    node: Rc<Node>,
}

impl Var {
    pub fn leaf(value: Tensor, requires_grad: bool) -> Var {
        Var {
            node: Rc::new(Node {
                value,
                requires_grad,
                grad: RefCell::new(None),
                parents: Vec::new(),
                grad_fn: None,
            }),
        }
    }

    /// Trainable leaf.
    pub fn param(value: Tensor) -> Var {
        Var::leaf(value, true)
    }

    /// Frozen leaf: gradient flows through ops on it but is never stored.
    pub fn constant(value: Tensor) -> Var {
        Var::leaf(value, false)
    }

    pub(crate) fn from_op(value: Tensor, parents: Vec<Var>, grad_fn: Box<dyn GradFn>) -> Var {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Var {
            node: Rc::new(Node {
                value,
                requires_grad,
                grad: RefCell::new(None),
                parents,
                grad_fn: if requires_grad { Some(grad_fn) } else { None },
            }),
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.node.value
    }

    pub fn shape(&self) -> &[usize] {
        self.node.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.node.grad.borrow().clone()
    }

    fn ptr(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }

    fn accumulate_grad(&self, g: Tensor) {
        debug_assert_eq!(g.shape(), self.shape());
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode differentiation from a scalar.
    ///
    /// Interior gradients are dropped once consumed; only leaves keep theirs.
    pub fn backward(&self) -> Result<()> {
        if !self.node.value.is_scalar() {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.node.requires_grad {
            return Ok(());
        }

        // Reverse post-order DFS over the requires_grad subgraph.
        enum Visit {
            Enter(Var),
            Exit(Var),
        }
        let mut order: Vec<Var> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack = vec![Visit::Enter(self.clone())];
        while let Some(v) = stack.pop() {
            match v {
                Visit::Enter(var) => {
                    if !visited.insert(var.ptr()) {
                        continue;
                    }
                    stack.push(Visit::Exit(var.clone()));
                    for p in &var.node.parents {
                        if p.requires_grad() && !visited.contains(&p.ptr()) {
                            stack.push(Visit::Enter(p.clone()));
                        }
                    }
                }
                Visit::Exit(var) => order.push(var),
            }
        }

        self.accumulate_grad(Tensor::full(self.shape(), 1.0));

        for var in order.iter().rev() {
            let Some(grad_fn) = var.node.grad_fn.as_ref() else {
                continue; // leaf keeps its gradient
            };
            let grad_out = var
                .node
                .grad
                .borrow_mut()
                .take()
                .expect("topological order guarantees a gradient here");
            let needs: Vec<bool> = var.node.parents.iter().map(|p| p.requires_grad()).collect();
            let parent_grads = grad_fn.grads(&grad_out, &var.node.parents, &var.node.value, &needs);
            debug_assert_eq!(parent_grads.len(), var.node.parents.len());
            for (parent, g) in var.node.parents.iter().zip(parent_grads) {
                if let Some(g) = g {
                    if parent.requires_grad() {
                        parent.accumulate_grad(g);
                    }
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops;

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Var::param(Tensor::zeros(&[2, 2]));
        let y = ops::scale(&x, 2.0);
        assert!(matches!(y.backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Var::param(Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let loss = ops::sum(&x);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let x = Var::param(Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let loss = ops::sum(&ops::mul(&x, &x).unwrap());
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn shared_node_accumulates() {
        // loss = sum(x + x) => dloss/dx = 2
        let x = Var::param(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let loss = ops::sum(&ops::add(&x, &x).unwrap());
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn frozen_leaf_gets_no_grad_but_propagates() {
        // y = frozen * x; gradient must reach x through the frozen factor.
        let frozen = Var::constant(Tensor::from_vec(&[2], vec![5.0, 7.0]).unwrap());
        let x = Var::param(Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap());
        let loss = ops::sum(&ops::mul(&frozen, &x).unwrap());
        loss.backward().unwrap();
        assert!(frozen.grad().is_none());
        assert_eq!(x.grad().unwrap().data(), &[5.0, 7.0]);
    }

    #[test]
    fn all_frozen_backward_is_noop() {
        let x = Var::constant(Tensor::scalar(2.0));
        let loss = ops::scale(&x, 3.0);
        loss.backward().unwrap();
        assert!(x.grad().is_none());
    }
}
