//! Dense tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a contiguous row-major buffer plus shape, an optional
//! gradient buffer of identical shape, and a `requires_grad` flag. Ops live
//! in [`ops`] and record themselves onto a [`Graph`] tape whenever an input
//! participates in differentiation; [`Graph::backward`] replays the tape in
//! exact reverse order.

pub mod gradcheck;
mod graph;
pub mod ops;

pub use graph::{Graph, NodeId};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use parking_lot::{MappedRwLockReadGuard, MappedRwLockWriteGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};
use rand::Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

struct Inner<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

/// Shared dense tensor. Cloning is cheap and aliases the same storage; values
/// are safe to hand between threads when no graph is attached.
pub struct Tensor<T> {
    inner: Arc<RwLock<Inner<T>>>,
}

impl<T> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { inner: Arc::clone(&self.inner) }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} wants {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self::new_unchecked(shape.to_vec(), data))
    }

    fn new_unchecked(shape: Vec<usize>, data: Vec<T>) -> Self {
        Tensor {
            inner: Arc::new(RwLock::new(Inner { shape, data, grad: None, requires_grad: false })),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new_unchecked(shape.to_vec(), vec![T::zero(); numel])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self::new_unchecked(shape.to_vec(), vec![value; numel])
    }

    pub fn scalar(value: T) -> Self {
        Self::new_unchecked(vec![], vec![value])
    }

    /// Gaussian-initialized tensor with the given standard deviation.
    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                T::cast(z * std)
            })
            .collect();
        Self::new_unchecked(shape.to_vec(), data)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.read().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.inner.read().shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.read().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.read().requires_grad
    }

    pub fn set_requires_grad(&self, on: bool) {
        self.inner.write().requires_grad = on;
    }

    /// Builder-style `set_requires_grad(true)`.
    pub fn traced(self) -> Self {
        self.set_requires_grad(true);
        self
    }

    pub fn data(&self) -> MappedRwLockReadGuard<'_, [T]> {
        RwLockReadGuard::map(self.inner.read(), |i| i.data.as_slice())
    }

    pub fn data_mut(&self) -> MappedRwLockWriteGuard<'_, [T]> {
        RwLockWriteGuard::map(self.inner.write(), |i| i.data.as_mut_slice())
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.read().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let inner = self.inner.read();
        assert_eq!(inner.data.len(), 1, "item() on tensor with {} elements", inner.data.len());
        inner.data[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.read().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.write().grad = None;
    }

    pub fn accumulate_grad(&self, g: &[T]) {
        let mut inner = self.inner.write();
        assert_eq!(g.len(), inner.data.len(), "gradient length mismatch");
        match inner.grad.as_mut() {
            Some(buf) => {
                for (b, &v) in buf.iter_mut().zip(g) {
                    *b = *b + v;
                }
            }
            None => inner.grad = Some(g.to_vec()),
        }
    }

    /// Deep copy of the values, detached from any graph, `requires_grad` off.
    pub fn detach(&self) -> Self {
        let inner = self.inner.read();
        Self::new_unchecked(inner.shape.clone(), inner.data.clone())
    }

    /// Identity of the underlying storage, used as a graph key.
    pub(crate) fn ptr_id(&self) -> usize {
        Arc::as_ptr(&self.inner) as usize
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.inner.read().data.iter().all(|v| v.is_finite())
    }
}

impl<T: std::fmt::Debug> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.read();
        write!(f, "Tensor{:?}", inner.shape)?;
        if inner.data.len() <= 8 {
            write!(f, " {:?}", inner.data)?;
        }
        Ok(())
    }
}
