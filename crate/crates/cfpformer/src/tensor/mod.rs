//! Minimal dense tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are immutable after forward creation; parameters are the only
//! tensors whose data is rewritten in place (by the optimizer, between
//! graph builds). The element type is generic so the same graph can run in
//! f32 for training and f64 for gradient verification.

mod conv;
mod elementwise;
mod matmul;
mod norm;
mod resize;
mod shape_ops;

pub use norm::SoftmaxBase;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Element type of the engine: f32 for training, f64 for verification runs.
pub trait Real: num_traits::Float + fmt::Debug + fmt::Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Backward closure: receives the node's output gradient and its parents,
/// and accumulates into each parent that requires grad.
pub(crate) type GradFn<T> = Box<dyn Fn(&[T], &[Tensor<T>])>;

pub(crate) struct Node<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward_fn: Option<GradFn<T>>,
}

/// N-dimensional row-major tensor, cheap to clone (shared handle).
pub struct Tensor<T: Real> {
    node: Rc<Node<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.node.id)
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

pub(crate) fn check_shape_data<T: Real>(shape: &[usize], data: &[T]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(Error::dim(
            "from_vec",
            format!("shape {:?} implies {} elements, got {}", shape, numel, data.len()),
        ));
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    fn new_node(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward_fn: Option<GradFn<T>>,
    ) -> Self {
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                backward_fn,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape_data(shape, &data)?;
        Ok(Self::new_node(shape.to_vec(), data, false, Vec::new(), None))
    }

    /// Leaf parameter: tracked by autodiff, mutable between graph builds.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape_data(shape, &data)?;
        Ok(Self::new_node(shape.to_vec(), data, true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new_node(shape.to_vec(), vec![T::zero(); numel], false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self::new_node(shape.to_vec(), vec![value; numel], false, Vec::new(), None)
    }

    pub fn scalar(value: T) -> Self {
        Self::new_node(vec![1], vec![value], false, Vec::new(), None)
    }

    /// Internal constructor for op outputs. Debug builds reject non-finite
    /// values so NaN sources are caught at the op that produced them.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward_fn: GradFn<T>,
    ) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{op}: bad output shape");
        if cfg!(debug_assertions) {
            if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    op,
                    detail: format!("non-finite value {:?} at flat index {pos}", data[pos]),
                });
            }
        }
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Ok(Self::new_node(shape, data, requires_grad, parents, Some(backward_fn)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.node.data.borrow()[0])
    }

    /// Overwrite a leaf's data in place (optimizer step, checkpoint load).
    pub fn set_data(&self, data: &[T]) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::dim(
                "set_data",
                format!("{} elements into shape {:?}", data.len(), self.shape()),
            ));
        }
        self.node.data.borrow_mut().copy_from_slice(data);
        Ok(())
    }

    /// Constant copy sharing no graph history.
    pub fn detach(&self) -> Tensor<T> {
        Self::new_node(self.node.shape.clone(), self.to_vec(), false, Vec::new(), None)
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        if !self.node.requires_grad {
            return;
        }
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, &gi) in buf.iter_mut().zip(g) {
                    *b = *b + gi;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Repeated calls accumulate
    /// into leaf gradients until `zero_grad`.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward() requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.node.requires_grad {
            return Ok(()); // nothing reachable to differentiate
        }

        // Node ids are assigned in creation order and every op's inputs
        // predate it, so descending id order is a reverse topological order.
        let mut stack = vec![self.clone()];
        let mut seen: HashSet<u64> = HashSet::new();
        let mut order: Vec<Tensor<T>> = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.node.requires_grad || !seen.insert(t.node.id) {
                continue;
            }
            for p in &t.node.parents {
                stack.push(p.clone());
            }
            order.push(t);
        }
        order.sort_by(|a, b| b.node.id.cmp(&a.node.id));

        self.accumulate_grad(&[T::one()]);
        for t in &order {
            let g = t.node.grad.borrow().clone();
            let Some(g) = g else { continue };
            if let Some(f) = &t.node.backward_fn {
                f(&g, &t.node.parents);
            }
            // Intermediate grads are only needed to keep propagating;
            // free them once consumed. Leaves keep theirs.
            if t.node.backward_fn.is_some() && !Rc::ptr_eq(&t.node, &self.node) {
                *t.node.grad.borrow_mut() = None;
            }
        }
        Ok(())
    }
}
