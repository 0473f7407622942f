//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap reference-counted handle. Every differentiable
//! operation allocates a fresh output and, when at least one input requires
//! grad (and recording is enabled), attaches a backward node holding the
//! inputs and a local vector-Jacobian rule. [`Tensor::backward`] walks the
//! resulting graph in reverse topological order and accumulates gradients into
//! the `grad` buffers of the requires-grad leaves.

mod autograd;
mod conv;
mod gradcheck;
mod norm;
mod ops;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::rc::Rc;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

pub use autograd::GradTape;
pub use conv::{conv1d, conv3d, maxpool1d, Conv3dOpts};
pub use gradcheck::{grad_check, grad_check_leaves, GradCheckReport, FD_STEP};
pub use norm::{batch_norm, dropout, layer_norm, BatchNormState, NORM_EPS};
pub use ops::{broadcast_shape, concat};

/// Scalar element type. Implemented for `f32` (training) and `f64`
/// (finite-difference checks).
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording backward nodes.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Local backward rule: maps the output gradient to one optional gradient per
/// input (in input order). `None` means "no contribution".
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

pub(crate) struct Node<T: Real> {
    pub(crate) op: &'static str,
    pub(crate) inputs: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

struct Cellular<T: Real> {
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

pub struct Tensor<T: Real = f32>(Rc<Cellular<T>>);

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<_> = data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    fn raw(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Rc::new(Cellular {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            node,
        }))
    }

    /// Constant tensor (never tracked).
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidTensor(format!("zero extent in shape {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel_of(shape),
                data.len()
            )));
        }
        Ok(Self::raw(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf: receives gradients on backward.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(t.as_leaf(true))
    }

    pub fn scalar(v: T) -> Self {
        Self::raw(vec![], vec![v], false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::raw(shape.to_vec(), vec![v; numel_of(shape)], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// `n × n` identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut d = vec![T::zero(); n * n];
        for i in 0..n {
            d[i * n + i] = T::one();
        }
        Self::raw(vec![n, n], d, false, None)
    }

    /// A detached copy of this tensor's data as a fresh leaf.
    pub fn as_leaf(&self, requires_grad: bool) -> Self {
        Self::raw(self.0.shape.clone(), self.to_vec(), requires_grad, None)
    }

    pub fn detach(&self) -> Self {
        self.as_leaf(false)
    }

    /// Builds an op output, attaching a backward node when any input is tracked.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        op: &'static str,
        inputs: Vec<Tensor<T>>,
        backward: impl Fn(&[T]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            let node = Node {
                op,
                inputs,
                backward: Box::new(backward),
            };
            Self::raw(shape, data, true, Some(node))
        } else {
            Self::raw(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    /// Mutable access for in-place updates of leaves (optimizer steps,
    /// running statistics). Never call on a tensor that is part of a live graph.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    pub fn item(&self) -> T {
        self.0.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn has_node(&self) -> bool {
        self.0.node.is_some()
    }

    pub fn op_name(&self) -> &'static str {
        self.0.node.as_ref().map_or("leaf", |n| n.op)
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn node(&self) -> Option<&Node<T>> {
        self.0.node.as_ref()
    }

    pub(crate) fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as *const () as usize
    }

    pub fn same_tensor(&self, other: &Tensor<T>) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Converts the element type; the result is an untracked leaf.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::of(v.f64())).collect();
        Tensor::raw(self.0.shape.clone(), data, false, None)
    }

    /// Reverse-mode sweep from this scalar; see [`GradTape`].
    pub fn backward(&self) -> Result<()> {
        autograd::backward(self)
    }
}

pub(crate) fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(Error::InvalidAxis { op, axis, rank })
    } else {
        Ok(())
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel_of(&shape[..axis]);
    let inner = numel_of(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f32>::new(vec![1.0; 5], &[2, 3]).is_err());
        assert!(Tensor::<f32>::new(vec![], &[0, 3]).is_err());
        assert!(Tensor::<f32>::new(vec![1.0; 6], &[2, 3]).is_ok());
    }

    #[test]
    fn untracked_tensors_never_get_nodes() {
        let a = Tensor::<f64>::new(vec![1.0, 2.0], &[2]).unwrap();
        let b = a.relu();
        assert!(!b.requires_grad());
        assert!(!b.has_node());

        let p = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
        let q = no_grad(|| p.relu());
        assert!(!q.has_node());
        assert!(p.relu().has_node());
    }
}
