//! Elementwise operators, activations, reductions, and shape ops.

use std::sync::Arc;

use crate::autodiff::{Op, OpNode};
use crate::error::TensorError;
use crate::tensor::Tensor;

/// Sigmoid outputs are pinned inside (0, 1): float rounding would otherwise
/// let saturated logits reach exactly 0 or 1, which the mask loss and BCE
/// both reject.
const SIGMOID_MARGIN: f32 = 1e-7;

/// Arguments of the BCE logarithms are clamped at this floor.
pub const BCE_LN_CLAMP: f64 = 1e-12;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn expect_5d(op: &'static str, t: &Tensor) -> Result<(), TensorError> {
    if t.ndim() != 5 {
        return Err(TensorError::Rank {
            op,
            expected: 5,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tensor {
    fn unary(&self, op: Op, f: impl Fn(f32) -> f32) -> Tensor {
        let out = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(self.shape().to_vec(), out, OpNode::new(op, vec![self.clone()]))
    }

    fn binary(
        &self,
        name: &'static str,
        other: &Tensor,
        op: Op,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Tensor, TensorError> {
        same_shape(name, self, other)?;
        let out = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            OpNode::new(op, vec![self.clone(), other.clone()]),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.binary("add", other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.binary("sub", other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.binary("mul", other, Op::Mul, |a, b| a * b)
    }

    pub fn square(&self) -> Tensor {
        self.unary(Op::Square, |v| v * v)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Op::Relu, |v| v.max(0.0))
    }

    /// Logistic function with outputs strictly inside (0, 1).
    pub fn sigmoid(&self) -> Tensor {
        self.unary(Op::Sigmoid, |v| {
            (1.0 / (1.0 + (-v).exp())).clamp(SIGMOID_MARGIN, 1.0 - SIGMOID_MARGIN)
        })
    }

    /// `-ln(x + eps)`; rejects arguments where the log is undefined.
    pub fn neg_log_eps(&self, eps: f32) -> Result<Tensor, TensorError> {
        if let Some(&bad) = self.data().iter().find(|&&v| v + eps <= 0.0) {
            return Err(TensorError::NonPositiveLog { value: bad, eps });
        }
        Ok(self.unary(Op::NegLogEps { eps }, |v| -(v + eps).ln()))
    }

    /// Multiplication by a compile-time-known constant.
    pub fn scale(&self, factor: f32) -> Tensor {
        self.unary(Op::Scale { factor }, |v| v * factor)
    }

    /// Mean over every element, as a scalar tensor. Accumulates in f64 so
    /// million-element means keep full f32 precision.
    pub fn mean_all(&self) -> Tensor {
        let sum: f64 = self.data().iter().map(|&v| v as f64).sum();
        let mean = (sum / self.numel() as f64) as f32;
        Tensor::from_op(vec![1], vec![mean], OpNode::new(Op::MeanAll, vec![self.clone()]))
    }

    /// Arithmetic mean over the time axis: `[K,C,N,W,H] -> [K,C,1,W,H]`.
    pub fn mean_over_time(&self) -> Result<Tensor, TensorError> {
        expect_5d("mean_over_time", self)?;
        let s = self.shape();
        let (outer, frames, plane) = (s[0] * s[1], s[2], s[3] * s[4]);
        let data = self.data();
        let mut out = vec![0.0f32; outer * plane];
        for o in 0..outer {
            let acc = &mut out[o * plane..(o + 1) * plane];
            for t in 0..frames {
                let base = (o * frames + t) * plane;
                for (a, v) in acc.iter_mut().zip(&data[base..base + plane]) {
                    *a += v;
                }
            }
            let inv = 1.0 / frames as f32;
            for a in acc.iter_mut() {
                *a *= inv;
            }
        }
        drop(data);
        let shape = vec![s[0], s[1], 1, s[3], s[4]];
        Ok(Tensor::from_op(
            shape,
            out,
            OpNode::new(Op::MeanOverTime, vec![self.clone()]),
        ))
    }

    /// Repeats a single-frame tensor along the time axis:
    /// `[K,C,1,W,H] -> [K,C,N,W,H]`.
    pub fn broadcast_time(&self, frames: usize) -> Result<Tensor, TensorError> {
        expect_5d("broadcast_time", self)?;
        let s = self.shape();
        if s[2] != 1 || frames == 0 {
            return Err(TensorError::Invalid {
                op: "broadcast_time",
                detail: format!("time axis must be 1 (got {}) and frames >= 1 (got {frames})", s[2]),
            });
        }
        let (outer, plane) = (s[0] * s[1], s[3] * s[4]);
        let data = self.data();
        let mut out = vec![0.0f32; outer * frames * plane];
        for o in 0..outer {
            let slice = &data[o * plane..(o + 1) * plane];
            for t in 0..frames {
                out[(o * frames + t) * plane..][..plane].copy_from_slice(slice);
            }
        }
        drop(data);
        let shape = vec![s[0], s[1], frames, s[3], s[4]];
        Ok(Tensor::from_op(
            shape,
            out,
            OpNode::new(Op::BroadcastTime, vec![self.clone()]),
        ))
    }

    /// Concatenates along the channel axis; all other extents must match.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        expect_5d("concat_channels", self)?;
        expect_5d("concat_channels", other)?;
        let (sa, sb) = (self.shape(), other.shape());
        let compatible = sa[0] == sb[0] && sa[2..] == sb[2..];
        if !compatible {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let inner = sa[2] * sa[3] * sa[4];
        let (ca, cb) = (sa[1] * inner, sb[1] * inner);
        let (da, db) = (self.data(), other.data());
        let mut out = vec![0.0f32; (ca + cb) * sa[0]];
        for k in 0..sa[0] {
            let base = k * (ca + cb);
            out[base..base + ca].copy_from_slice(&da[k * ca..(k + 1) * ca]);
            out[base + ca..base + ca + cb].copy_from_slice(&db[k * cb..(k + 1) * cb]);
        }
        drop((da, db));
        let shape = vec![sa[0], sa[1] + sb[1], sa[2], sa[3], sa[4]];
        Ok(Tensor::from_op(
            shape,
            out,
            OpNode::new(Op::ConcatChannels, vec![self.clone(), other.clone()]),
        ))
    }

    /// Mean-reduced binary cross entropy against a constant target. The
    /// log arguments are clamped at 1e-12; gradients flow to `self` only.
    pub fn bce_mean(&self, target: &Tensor) -> Result<Tensor, TensorError> {
        same_shape("bce_mean", self, target)?;
        let p = self.data();
        let y = target.data();
        let mut sum = 0.0f64;
        for (&pi, &yi) in p.iter().zip(y.iter()) {
            let pi = pi as f64;
            let yi = yi as f64;
            sum += yi * pi.max(BCE_LN_CLAMP).ln() + (1.0 - yi) * (1.0 - pi).max(BCE_LN_CLAMP).ln();
        }
        let loss = (-sum / p.len() as f64) as f32;
        let target_copy = Arc::new(y.clone());
        drop((p, y));
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            OpNode::new(
                Op::BceMean {
                    target: target_copy,
                    clamp: BCE_LN_CLAMP,
                },
                vec![self.clone()],
            ),
        ))
    }
}
