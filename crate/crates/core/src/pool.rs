//! Max pooling with recorded argmax indices and its partial inverse.

use std::sync::Arc;

use crate::autodiff::{Op, OpNode};
use crate::error::TensorError;
use crate::tensor::Tensor;

/// Flat argmax positions recorded by [`Tensor::maxpool3d`]. Indices point
/// into the pooled tensor's full buffer, so unpooling is a plain scatter.
#[derive(Clone, Debug)]
pub struct PoolIndices {
    values_shape: Vec<usize>,
    input_shape: Vec<usize>,
    flat: Arc<Vec<u32>>,
}

impl PoolIndices {
    pub fn values_shape(&self) -> &[usize] {
        &self.values_shape
    }

    /// Shape of the tensor the pool ran over; the natural `output_shape`
    /// for unpooling.
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn flat(&self) -> &[u32] {
        &self.flat
    }
}

fn pooled_extent(
    input: usize,
    k: usize,
    stride: usize,
) -> Result<usize, TensorError> {
    if stride == 0 {
        return Err(TensorError::Geometry {
            op: "maxpool3d",
            detail: "stride must be >= 1".into(),
        });
    }
    if k == 0 || k > input {
        return Err(TensorError::Geometry {
            op: "maxpool3d",
            detail: format!("pool kernel {k} exceeds input extent {input}"),
        });
    }
    Ok((input - k) / stride + 1)
}

impl Tensor {
    /// Per-window maxima plus argmax indices. Ties break toward the lowest
    /// flat index, which makes unpooling deterministic.
    pub fn maxpool3d(
        &self,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
    ) -> Result<(Tensor, PoolIndices), TensorError> {
        let s = self.shape();
        if s.len() != 5 {
            return Err(TensorError::Rank {
                op: "maxpool3d",
                expected: 5,
                shape: s.to_vec(),
            });
        }
        let [kb, c_n, n_i, w_i, h_i] = [s[0], s[1], s[2], s[3], s[4]];
        if self.numel() > u32::MAX as usize {
            return Err(TensorError::Invalid {
                op: "maxpool3d",
                detail: "tensor too large for 32-bit pool indices".into(),
            });
        }
        let n_o = pooled_extent(n_i, kernel.0, stride.0)?;
        let w_o = pooled_extent(w_i, kernel.1, stride.1)?;
        let h_o = pooled_extent(h_i, kernel.2, stride.2)?;
        let out_shape = vec![kb, c_n, n_o, w_o, h_o];
        let numel: usize = out_shape.iter().product();

        let data = self.data();
        let mut values = vec![0.0f32; numel];
        let mut flat = vec![0u32; numel];
        let src_cs = n_i * w_i * h_i;
        let mut j = 0usize;
        for k in 0..kb {
            for c in 0..c_n {
                let ch_base = (k * c_n + c) * src_cs;
                for no in 0..n_o {
                    for wo in 0..w_o {
                        for ho in 0..h_o {
                            let (n0, w0, h0) = (no * stride.0, wo * stride.1, ho * stride.2);
                            let mut best = f32::NEG_INFINITY;
                            let mut best_idx = 0usize;
                            for dn in 0..kernel.0 {
                                for dw in 0..kernel.1 {
                                    for dh in 0..kernel.2 {
                                        let idx = ch_base
                                            + ((n0 + dn) * w_i + (w0 + dw)) * h_i
                                            + (h0 + dh);
                                        let v = data[idx];
                                        if v > best {
                                            best = v;
                                            best_idx = idx;
                                        }
                                    }
                                }
                            }
                            values[j] = best;
                            flat[j] = best_idx as u32;
                            j += 1;
                        }
                    }
                }
            }
        }
        drop(data);

        let flat = Arc::new(flat);
        let indices = PoolIndices {
            values_shape: out_shape.clone(),
            input_shape: s.to_vec(),
            flat: Arc::clone(&flat),
        };
        let values = Tensor::from_op(
            out_shape,
            values,
            OpNode::new(Op::MaxPool3d { indices: flat }, vec![self.clone()]),
        );
        Ok((values, indices))
    }

    /// Scatters pooled values back to their recorded positions; every other
    /// element is zero.
    pub fn maxunpool3d(
        &self,
        indices: &PoolIndices,
        output_shape: &[usize],
    ) -> Result<Tensor, TensorError> {
        if self.shape() != indices.values_shape() {
            return Err(TensorError::ShapeMismatch {
                op: "maxunpool3d",
                lhs: self.shape().to_vec(),
                rhs: indices.values_shape().to_vec(),
            });
        }
        let out_len: usize = output_shape.iter().product();
        let mut out = vec![0.0f32; out_len];
        let values = self.data();
        for (&idx, &v) in indices.flat.iter().zip(values.iter()) {
            let idx = idx as usize;
            if idx >= out_len {
                return Err(TensorError::IndexOutOfRange {
                    op: "maxunpool3d",
                    index: idx,
                    len: out_len,
                });
            }
            out[idx] = v;
        }
        drop(values);
        Ok(Tensor::from_op(
            output_shape.to_vec(),
            out,
            OpNode::new(
                Op::MaxUnpool3d {
                    indices: Arc::clone(&indices.flat),
                },
                vec![self.clone()],
            ),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_picks_max_and_position() {
        // one time slice of [[1,2],[3,4]]
        let x = Tensor::from_vec(&[1, 1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (v, idx) = x.maxpool3d((1, 2, 2), (1, 2, 2)).unwrap();
        assert_eq!(v.to_vec(), vec![4.0]);
        assert_eq!(idx.flat(), &[3]); // (w=1, h=1)
    }

    #[test]
    fn constant_input_ties_break_to_first_element() {
        let x = Tensor::full(&[1, 1, 2, 4, 4], 7.0);
        let (v, idx) = x.maxpool3d((1, 2, 2), (1, 2, 2)).unwrap();
        assert!(v.to_vec().iter().all(|&v| v == 7.0));
        // every window's argmax is its lowest flat corner
        for (j, &i) in idx.flat().iter().enumerate() {
            let (no, rest) = (j / 4, j % 4);
            let (wo, ho) = (rest / 2, rest % 2);
            let expect = (no * 4 + wo * 2) * 4 + ho * 2;
            assert_eq!(i as usize, expect);
        }
    }

    #[test]
    fn unpool_restores_maxima_in_place() {
        let x = Tensor::from_vec(
            &[1, 1, 1, 2, 4],
            vec![5.0, 1.0, 2.0, 8.0, 0.0, 3.0, 9.0, 4.0],
        )
        .unwrap();
        let (v, idx) = x.maxpool3d((1, 2, 2), (1, 2, 2)).unwrap();
        assert_eq!(v.to_vec(), vec![5.0, 9.0]);
        let back = v.maxunpool3d(&idx, &[1, 1, 1, 2, 4]).unwrap();
        assert_eq!(back.to_vec(), vec![5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 9.0, 0.0]);
    }

    #[test]
    fn unpool_rejects_out_of_range_target() {
        let x = Tensor::from_vec(&[1, 1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (v, idx) = x.maxpool3d((1, 2, 2), (1, 2, 2)).unwrap();
        let err = v.maxunpool3d(&idx, &[1, 1, 1, 1, 2]).unwrap_err();
        assert!(matches!(err, TensorError::IndexOutOfRange { .. }));
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        let x = Tensor::zeros(&[1, 1, 1, 2, 2]);
        assert!(x.maxpool3d((1, 3, 3), (1, 1, 1)).is_err());
    }
}
