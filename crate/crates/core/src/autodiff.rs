//! Graph recording and reverse-mode backward formulas.
//!
//! Each operator output owns an [`OpNode`] naming the op kind, the input
//! handles, and whatever context the backward pass needs (convolution
//! geometry, pooling argmax indices). Forward kernels live next to their
//! ops (`ops`, `conv`, `pool`); this module dispatches their adjoints.

use std::cell::Cell;
use std::sync::Arc;

use crate::conv::{self, ConvGeometry};
use crate::error::TensorError;
use crate::tensor::Tensor;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Runs `f` without recording the graph. Forward passes inside are plain
/// evaluation: outputs carry no nodes and backward through them is a no-op.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|c| c.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let _restore = Restore(prev);
    f()
}

pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Square,
    Relu,
    Sigmoid,
    NegLogEps { eps: f32 },
    Scale { factor: f32 },
    MeanAll,
    MeanOverTime,
    BroadcastTime,
    ConcatChannels,
    Conv3d { geom: ConvGeometry },
    ConvTranspose3d { geom: ConvGeometry },
    MaxPool3d { indices: Arc<Vec<u32>> },
    MaxUnpool3d { indices: Arc<Vec<u32>> },
    BceMean { target: Arc<Vec<f32>>, clamp: f64 },
}

pub(crate) struct OpNode {
    op: Op,
    inputs: Vec<Tensor>,
}

impl OpNode {
    pub(crate) fn new(op: Op, inputs: Vec<Tensor>) -> Self {
        OpNode { op, inputs }
    }

    pub(crate) fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    /// Gradients of the loss w.r.t. each input, given the gradient w.r.t.
    /// the output. `None` marks inputs this op never differentiates
    /// through (there are none today, but pooling indices arrive via
    /// context rather than inputs for exactly that reason).
    pub(crate) fn backward(
        &self,
        dout: &[f32],
        output: &Tensor,
    ) -> Result<Vec<Option<Vec<f32>>>, TensorError> {
        let grads = match &self.op {
            Op::Add => vec![Some(dout.to_vec()), Some(dout.to_vec())],
            Op::Sub => vec![
                Some(dout.to_vec()),
                Some(dout.iter().map(|d| -d).collect()),
            ],
            Op::Mul => {
                let a = self.inputs[0].data();
                let b = self.inputs[1].data();
                let da = dout.iter().zip(b.iter()).map(|(d, b)| d * b).collect();
                let db = dout.iter().zip(a.iter()).map(|(d, a)| d * a).collect();
                vec![Some(da), Some(db)]
            }
            Op::Square => {
                let a = self.inputs[0].data();
                vec![Some(
                    dout.iter().zip(a.iter()).map(|(d, a)| 2.0 * a * d).collect(),
                )]
            }
            Op::Relu => {
                let a = self.inputs[0].data();
                vec![Some(
                    dout.iter()
                        .zip(a.iter())
                        .map(|(d, a)| if *a > 0.0 { *d } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Sigmoid => {
                let y = output.data();
                vec![Some(
                    dout.iter()
                        .zip(y.iter())
                        .map(|(d, y)| d * y * (1.0 - y))
                        .collect(),
                )]
            }
            Op::NegLogEps { eps } => {
                let a = self.inputs[0].data();
                vec![Some(
                    dout.iter()
                        .zip(a.iter())
                        .map(|(d, a)| -d / (a + eps))
                        .collect(),
                )]
            }
            Op::Scale { factor } => vec![Some(dout.iter().map(|d| d * factor).collect())],
            Op::MeanAll => {
                let n = self.inputs[0].numel();
                let g = dout[0] / n as f32;
                vec![Some(vec![g; n])]
            }
            Op::MeanOverTime => {
                let shape = self.inputs[0].shape();
                let (frames, plane) = (shape[2], shape[3] * shape[4]);
                let outer = shape[0] * shape[1];
                let scale = 1.0 / frames as f32;
                let mut dx = vec![0.0f32; self.inputs[0].numel()];
                for o in 0..outer {
                    let dslice = &dout[o * plane..(o + 1) * plane];
                    for t in 0..frames {
                        let base = (o * frames + t) * plane;
                        for (dx_v, d) in dx[base..base + plane].iter_mut().zip(dslice) {
                            *dx_v = d * scale;
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::BroadcastTime => {
                let out_shape = output.shape();
                let (frames, plane) = (out_shape[2], out_shape[3] * out_shape[4]);
                let outer = out_shape[0] * out_shape[1];
                let mut dx = vec![0.0f32; self.inputs[0].numel()];
                for o in 0..outer {
                    let acc = &mut dx[o * plane..(o + 1) * plane];
                    for t in 0..frames {
                        let base = (o * frames + t) * plane;
                        for (a, d) in acc.iter_mut().zip(&dout[base..base + plane]) {
                            *a += d;
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::ConcatChannels => {
                let (a, b) = (&self.inputs[0], &self.inputs[1]);
                let (sa, sb) = (a.shape(), b.shape());
                let inner = sa[2] * sa[3] * sa[4];
                let (ca, cb) = (sa[1] * inner, sb[1] * inner);
                let mut da = vec![0.0f32; a.numel()];
                let mut db = vec![0.0f32; b.numel()];
                for k in 0..sa[0] {
                    let base = k * (ca + cb);
                    da[k * ca..(k + 1) * ca].copy_from_slice(&dout[base..base + ca]);
                    db[k * cb..(k + 1) * cb].copy_from_slice(&dout[base + ca..base + ca + cb]);
                }
                vec![Some(da), Some(db)]
            }
            Op::Conv3d { geom } => {
                let x = self.inputs[0].data();
                let w = self.inputs[1].data();
                let dx = conv::conv_src_grad(geom, dout, &w, None);
                let dw = conv::conv_weight_grad(geom, &x, dout);
                let db = conv::channel_sum(dout, &geom.dst);
                vec![Some(dx), Some(dw), Some(db)]
            }
            Op::ConvTranspose3d { geom } => {
                // Output lives on the conv source side; input on the dst side.
                let u = self.inputs[0].data();
                let w = self.inputs[1].data();
                let du = conv::conv_apply(geom, dout, &w, None);
                let dw = conv::conv_weight_grad(geom, dout, &u);
                let db = conv::channel_sum(dout, &geom.src);
                vec![Some(du), Some(dw), Some(db)]
            }
            Op::MaxPool3d { indices } => {
                let mut dx = vec![0.0f32; self.inputs[0].numel()];
                for (j, &idx) in indices.iter().enumerate() {
                    dx[idx as usize] += dout[j];
                }
                vec![Some(dx)]
            }
            Op::MaxUnpool3d { indices } => {
                let dv = indices.iter().map(|&idx| dout[idx as usize]).collect();
                vec![Some(dv)]
            }
            Op::BceMean { target, clamp } => {
                let p = self.inputs[0].data();
                let n = p.len() as f64;
                let upstream = dout[0] as f64;
                let mut dp = Vec::with_capacity(p.len());
                for (&pi, &yi) in p.iter().zip(target.iter()) {
                    let pi = pi as f64;
                    let yi = yi as f64;
                    let pos = if pi > *clamp { yi / pi } else { 0.0 };
                    let neg = if 1.0 - pi > *clamp {
                        (1.0 - yi) / (1.0 - pi)
                    } else {
                        0.0
                    };
                    dp.push((upstream * (neg - pos) / n) as f32);
                }
                vec![Some(dp)]
            }
        };
        Ok(grads)
    }
}
