//! The joint mask/background training loss and the supervised baseline.
//!
//! The unsupervised loss couples the two models through one scalar: the
//! squared per-frame difference between the input and the predicted static
//! background, attenuated where the mask is active (via `-ln(mask + eps)`),
//! plus a constant per-unit cost on mask activation. Masking is therefore
//! only worth buying where the squared background error it hides exceeds
//! the cost — which, with a faithful background, is exactly at moving
//! objects. One backward pass trains both parameter sets.

use serde::Serialize;
use thiserror::Error;

use crate::error::TensorError;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f32 = 0.001;
pub const DEFAULT_ALPHA: f32 = 1.0;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("mask output contains {value} outside [0, 1]")]
    MaskOutOfRange { value: f32 },
    #[error("prediction contains {value} outside [0, 1]")]
    PredOutOfRange { value: f32 },
    #[error("target contains non-binary value {value}")]
    NonBinaryTarget { value: f32 },
    #[error("alpha must be positive, got {0}")]
    BadAlpha(f32),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Every stage of the loss computation, kept for logging and tests. The
/// scalar stages stay connected to the graph, so calling
/// `total.backward()` trains both models at once.
pub struct LossBreakdown {
    /// Per-frame input minus background.
    pub delta: Tensor,
    /// Elementwise square of `delta`.
    pub delta_sq: Tensor,
    /// `-ln(mask + eps) * delta_sq`.
    pub masked: Tensor,
    /// Mean of `masked` over batch, time, and space (scalar tensor).
    pub background_term: Tensor,
    /// `alpha * mean(mask)` (scalar tensor).
    pub mask_cost: Tensor,
    /// `background_term + mask_cost` (scalar tensor).
    pub total: Tensor,
    pub alpha: f32,
    pub epsilon: f32,
}

/// Scalar view of a [`LossBreakdown`] for training logs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossScalars {
    pub background_term: f32,
    pub mask_cost: f32,
    pub total: f32,
    pub alpha: f32,
    pub epsilon: f32,
}

impl LossBreakdown {
    pub fn scalars(&self) -> LossScalars {
        LossScalars {
            background_term: self.background_term.item().unwrap_or(f32::NAN),
            mask_cost: self.mask_cost.item().unwrap_or(f32::NAN),
            total: self.total.item().unwrap_or(f32::NAN),
            alpha: self.alpha,
            epsilon: self.epsilon,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.scalars()).expect("scalar struct serializes")
    }
}

/// Subtracts the single background frame from every input frame:
/// `delta[.., n, :, :] = input[.., n, :, :] - background`.
pub fn frame_differential(input: &Tensor, background: &Tensor) -> Result<Tensor, LossError> {
    let (si, sb) = (input.shape().to_vec(), background.shape().to_vec());
    let compatible = si.len() == 5
        && sb.len() == 5
        && sb[2] == 1
        && si[0] == sb[0]
        && si[1] == sb[1]
        && si[3] == sb[3]
        && si[4] == sb[4];
    if !compatible {
        return Err(LossError::Tensor(TensorError::ShapeMismatch {
            op: "frame_differential",
            lhs: si,
            rhs: sb,
        }));
    }
    let wide = background.broadcast_time(input.shape()[2])?;
    Ok(input.sub(&wide)?)
}

/// The joint unsupervised loss over a batch. `mask` must come from a
/// sigmoid head (values in [0, 1]); `background` is a single frame per
/// batch item. Means run over every element including the batch axis, so
/// the loss scale is batch-size invariant.
pub fn dual_loss(
    input: &Tensor,
    mask: &Tensor,
    background: &Tensor,
    alpha: f32,
    epsilon: f32,
) -> Result<LossBreakdown, LossError> {
    // alpha = 0 is allowed: the loss degenerates to weighted background
    // error, which the bypass-cost property tests rely on.
    if alpha < 0.0 {
        return Err(LossError::BadAlpha(alpha));
    }
    if let Some(&bad) = mask.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(LossError::MaskOutOfRange { value: bad });
    }
    if mask.shape() != input.shape() {
        return Err(LossError::Tensor(TensorError::ShapeMismatch {
            op: "dual_loss",
            lhs: mask.shape().to_vec(),
            rhs: input.shape().to_vec(),
        }));
    }
    let delta = frame_differential(input, background)?;
    let delta_sq = delta.square();
    let masked = mask.neg_log_eps(epsilon)?.mul(&delta_sq)?;
    let background_term = masked.mean_all();
    let mask_cost = mask.mean_all().scale(alpha);
    let total = background_term.add(&mask_cost)?;
    Ok(LossBreakdown {
        delta,
        delta_sq,
        masked,
        background_term,
        mask_cost,
        total,
        alpha,
        epsilon,
    })
}

/// Analytic per-pixel minimizer of `-ln(j + eps) * delta_sq + alpha * j`
/// over `j` in [0, 1]: the clamped stationary point
/// `j* = clamp(delta_sq / alpha - eps, 0, 1)`.
pub fn optimal_mask_value(delta_sq: f64, alpha: f64, eps: f64) -> f64 {
    (delta_sq / alpha - eps).clamp(0.0, 1.0)
}

/// Elementwise [`optimal_mask_value`] over a squared-differential tensor.
pub fn optimal_mask(delta_sq: &Tensor, alpha: f32, epsilon: f32) -> Result<Tensor, LossError> {
    if alpha <= 0.0 {
        return Err(LossError::BadAlpha(alpha));
    }
    let data = delta_sq
        .data()
        .iter()
        .map(|&d| optimal_mask_value(d as f64, alpha as f64, epsilon as f64) as f32)
        .collect();
    Ok(Tensor::from_vec(delta_sq.shape(), data)?)
}

/// Mean-reduced binary cross entropy with validated operands: predictions
/// in [0, 1], targets exactly 0 or 1. Log arguments are clamped at 1e-12.
pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor, LossError> {
    if let Some(&bad) = pred.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(LossError::PredOutOfRange { value: bad });
    }
    if let Some(&bad) = target.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(LossError::NonBinaryTarget { value: bad });
    }
    Ok(pred.bce_mean(target)?)
}
