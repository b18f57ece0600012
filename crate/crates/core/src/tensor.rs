//! Dense float tensors with reverse-mode gradient tracking.
//!
//! A [`Tensor`] is a cheaply clonable handle (`Arc`) to an immutable shape
//! plus interior-mutable data and gradient buffers. Operators record the
//! graph on the output tensor; [`Tensor::backward`] walks it once in
//! reverse topological order. The canonical layout for video batches is
//! 5-d `[batch, channels, time, width, height]`, row-major with the last
//! axis fastest.

use std::collections::HashSet;
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::autodiff::{grad_enabled, OpNode};
use crate::error::TensorError;

pub(crate) struct Inner {
    shape: Vec<usize>,
    data: RwLock<Vec<f32>>,
    grad: Mutex<Option<Vec<f32>>>,
    requires_grad: bool,
    pub(crate) node: Option<OpNode>,
}

/// Handle to a dense float32 tensor. Clones share storage.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Arc<Inner>,
}

fn checked_numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, node: Option<OpNode>) -> Self {
        debug_assert_eq!(checked_numel(&shape), data.len());
        Tensor {
            inner: Arc::new(Inner {
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad,
                node,
            }),
        }
    }

    /// Leaf tensor that does not track gradients.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self, TensorError> {
        let expected = checked_numel(shape);
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Self::new(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates a gradient during backward (a parameter).
    pub fn param(shape: &[usize], data: Vec<f32>) -> Result<Self, TensorError> {
        let t = Self::from_vec(shape, data)?;
        // Safe: `t` was just created and has a single owner.
        let inner = Arc::into_inner(t.inner).expect("fresh tensor has one owner");
        Ok(Tensor {
            inner: Arc::new(Inner {
                requires_grad: true,
                ..inner
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape.to_vec(), vec![0.0; checked_numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self::new(shape.to_vec(), vec![value; checked_numel(shape)], false, None)
    }

    pub fn scalar(value: f32) -> Self {
        Self::new(vec![1], vec![value], false, None)
    }

    /// Output of an operator. Tracks the graph only while gradients are
    /// enabled and at least one input participates.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f32>, node: OpNode) -> Self {
        let track = grad_enabled() && node.inputs().iter().any(|t| t.participates());
        Self::new(shape, data, false, if track { Some(node) } else { None })
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        checked_numel(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True when this tensor is part of a recorded graph or is a parameter.
    pub(crate) fn participates(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f32>> {
        self.inner.data.read().expect("tensor data lock poisoned")
    }

    /// Mutable access to the raw buffer. The only supported writers are the
    /// optimizer and checkpoint/test fixtures; everything else treats
    /// tensors as immutable once created.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<f32>> {
        self.inner.data.write().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data().clone()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> Result<f32, TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.shape().to_vec(),
            });
        }
        Ok(self.data()[0])
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Adds into the gradient buffer, creating it if absent. Backward uses
    /// this internally; tests use it to drive the optimizer directly.
    pub fn accumulate_grad(&self, delta: &[f32]) {
        let mut slot = self.inner.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Checks every stored value is finite. Used as a debug-mode guard and
    /// by the training divergence check.
    pub fn validate_finite(&self, context: &str) -> Result<(), TensorError> {
        if self.data().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite {
                context: context.to_string(),
            })
        }
    }

    /// Reverse-mode differentiation from a scalar loss. Populates `grad` on
    /// every participating tensor reachable from `self`; each node is
    /// visited exactly once.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.shape().to_vec(),
            });
        }
        let order = topo_order(self);
        self.accumulate_grad(&[1.0]);
        for t in order.iter().rev() {
            let Some(node) = &t.inner.node else { continue };
            let dout = t
                .grad()
                .expect("topological order guarantees an upstream gradient");
            let input_grads = node.backward(&dout, t)?;
            for (input, g) in node.inputs().iter().zip(input_grads) {
                if let Some(g) = g {
                    if input.participates() {
                        input.accumulate_grad(&g);
                    }
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.inner.shape, self.inner.requires_grad
        )
    }
}

/// Post-order over the recorded graph: inputs appear before the tensors
/// computed from them. Iterative to keep deep graphs off the call stack.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<*const Inner> = HashSet::new();
    // (tensor, children_pushed)
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        let key = Arc::as_ptr(&t.inner);
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(key) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = &t.inner.node {
            for input in node.inputs() {
                if !visited.contains(&Arc::as_ptr(&input.inner)) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_length_mismatch() {
        let err = Tensor::from_vec(&[2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { expected: 6, got: 5, .. }));
    }

    #[test]
    fn item_rejects_non_scalar() {
        let t = Tensor::zeros(&[2]);
        assert!(t.item().is_err());
    }

    #[test]
    fn grad_accumulates_across_calls() {
        let t = Tensor::param(&[2], vec![0.0, 0.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[0.5, 0.5]);
        assert_eq!(t.grad().unwrap(), vec![1.5, 2.5]);
        t.clear_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn validate_finite_flags_nan() {
        let t = Tensor::from_vec(&[2], vec![1.0, f32::NAN]).unwrap();
        assert!(t.validate_finite("test").is_err());
        let ok = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        assert!(ok.validate_finite("test").is_ok());
    }
}
