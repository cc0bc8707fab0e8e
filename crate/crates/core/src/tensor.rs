//! Owned dense tensors.
//!
//! A [`Tensor`] is what parameters, cached hidden states and targets are
//! stored as. Computation happens on [`crate::Var`]s inside a
//! [`crate::Graph`]; a tensor enters a graph through [`crate::Graph::param`]
//! (sharing its storage) and gradients come back through
//! [`crate::Gradients::store_into`].

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::{Error, Real, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique identity of a tensor, used to route gradients back to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TensorId(u64);

impl TensorId {
    pub(crate) fn fresh() -> Self {
        TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[derive(Debug)]
pub struct Tensor<T: Real> {
    id: TensorId,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    /// Clones get a fresh identity so gradients never alias.
    fn clone(&self) -> Self {
        Tensor {
            id: TensorId::fresh(),
            shape: self.shape.clone(),
            data: Arc::new(self.data.as_ref().clone()),
            requires_grad: self.requires_grad,
            grad: self.grad.clone(),
        }
    }
}

impl<T: Real> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {:?} holds {} elements, got {}", shape, numel(&shape), data.len()),
            });
        }
        Ok(Tensor { id: TensorId::fresh(), shape, data: Arc::new(data), requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            id: TensorId::fresh(),
            shape: shape.to_vec(),
            data: Arc::new(vec![T::zero(); numel(shape)]),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data_mut().fill(value);
        t
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Tensor { id: TensorId::fresh(), shape: shape.to_vec(), data: Arc::new(data), requires_grad: false, grad: None }
    }

    pub(crate) fn from_shared(shape: Vec<usize>, data: Arc<Vec<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { id: TensorId::fresh(), shape, data, requires_grad: false, grad: None }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.set_requires_grad(requires_grad);
        self
    }

    pub fn id(&self) -> TensorId {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn shared(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data)
    }

    /// Mutable element access. Copies the storage first if a live graph
    /// still shares it.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Turning gradients off drops any existing gradient slot.
    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
        if !requires_grad {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, grad: Vec<T>) {
        debug_assert!(self.requires_grad);
        debug_assert_eq!(grad.len(), self.numel());
        self.grad = Some(grad);
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(T::zero());
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(max_abs_diff(&self.data, &other.data))
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor::from_fn(&self.shape, |i| self.data[i].as_f64())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let mut t = Tensor::from_fn(&self.shape, |i| U::lit(self.data[i].as_f64()));
        t.requires_grad = self.requires_grad;
        t
    }
}

pub fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()))
}
