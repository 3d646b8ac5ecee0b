//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! Values are immutable after creation; gradients live behind a lock so a
//! tensor can be shared freely. Each thread records onto its own tape, so
//! independent forward passes never contend.

mod fd;
mod ftm;
mod ops;
#[cfg(test)]
mod ops_tests;
mod tape;

pub use fd::{finite_difference_grad, max_rel_err, rel_err};
pub use ftm::{read_ftm, write_ftm};
pub(crate) use ops::matmul_raw;
pub use tape::{no_grad, tape_is_empty, tape_len};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
struct TensorInner {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad: RwLock<Option<Vec<f64>>>,
}

/// Dense row-major f64 tensor. Cloning is cheap (shared storage).
#[derive(Clone, Debug)]
pub struct Tensor {
    inner: Arc<TensorInner>,
}

impl Tensor {
    fn new_inner(shape: Vec<usize>, data: Arc<Vec<f64>>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: RwLock::new(None),
            }),
        }
    }

    /// Constant (non-trainable) tensor from raw data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor::new_inner(shape.to_vec(), Arc::new(data), false))
    }

    /// Trainable leaf tensor: participates in gradient tracking.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(t.requires_grad(true))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new_inner(shape.to_vec(), Arc::new(vec![0.0; n]), false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new_inner(shape.to_vec(), Arc::new(vec![value; n]), false)
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Tensor {
        Tensor::new_inner(vec![], Arc::new(vec![value]), false)
    }

    /// Same storage, new identity, with the given grad-tracking flag.
    pub fn requires_grad(&self, flag: bool) -> Tensor {
        Tensor::new_inner(self.inner.shape.clone(), Arc::clone(&self.inner.data), flag)
    }

    /// Internal: op output, recorded by the tape layer.
    pub(crate) fn op_output(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor::new_inner(shape, Arc::new(data), requires_grad)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.inner.data)
    }

    pub fn needs_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1 && self.inner.shape.len() <= 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor with {} elements", self.numel());
        self.inner.data[0]
    }

    /// Snapshot of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.read().unwrap().clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.write().unwrap() = None;
    }

    /// Remove and return the accumulated gradient.
    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.write().unwrap().take()
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.inner.grad.write().unwrap();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Value-identical tensor detached from the tape: contributes no
    /// gradient upstream.
    pub fn stop_gradient(&self) -> Tensor {
        Tensor::new_inner(self.inner.shape.clone(), Arc::clone(&self.inner.data), false)
    }

    /// Reverse pass from a scalar loss. Populates `grad` on every reachable
    /// tensor that requires grad, then clears the tape.
    pub fn backward(&self) -> Result<()> {
        tape::backward(self)
    }
}

/// 2-D accessor helpers used throughout the matrix-factorization code.
impl Tensor {
    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape().len(), 2);
        self.shape()[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape().len(), 2);
        self.shape()[1]
    }
}
