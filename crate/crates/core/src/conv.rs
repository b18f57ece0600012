//! 3-d convolution, its transpose, and their shared gradient kernels.
//!
//! Everything is expressed through one geometry in "conv orientation": a
//! cross-correlation mapping a source `[K, Ci, N, W, H]` to a destination
//! `[K, Co, No, Wo, Ho]` with kernel `[Co, Ci, kt, kw, kh]`. The transpose
//! convolution is the adjoint map dst -> src with the same kernel, so its
//! forward pass is the conv's source-gradient kernel and vice versa. That
//! buys the adjoint identity `<conv(x), y> == <x, convT(y)>` by
//! construction instead of by two coupled implementations.

use crate::autodiff::{Op, OpNode};
use crate::error::TensorError;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub(crate) struct ConvGeometry {
    pub src: [usize; 5],
    pub dst: [usize; 5],
    pub kernel: [usize; 5],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

/// Output extent of a strided cross-correlation along one axis.
fn conv_out_extent(
    op: &'static str,
    input: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, TensorError> {
    if stride == 0 {
        return Err(TensorError::Geometry {
            op,
            detail: "stride must be >= 1".into(),
        });
    }
    let padded = input + 2 * pad;
    if padded < k || k == 0 {
        return Err(TensorError::Geometry {
            op,
            detail: format!("kernel extent {k} does not fit input {input} with padding {pad}"),
        });
    }
    Ok((padded - k) / stride + 1)
}

fn expect_5d(op: &'static str, t: &Tensor) -> Result<[usize; 5], TensorError> {
    let s = t.shape();
    if s.len() != 5 {
        return Err(TensorError::Rank {
            op,
            expected: 5,
            shape: s.to_vec(),
        });
    }
    Ok([s[0], s[1], s[2], s[3], s[4]])
}

impl ConvGeometry {
    fn for_conv(
        src: [usize; 5],
        kernel: [usize; 5],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Self, TensorError> {
        if src[1] != kernel[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv3d",
                lhs: src.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        let mut dst = [src[0], kernel[0], 0, 0, 0];
        for a in 0..3 {
            dst[2 + a] = conv_out_extent("conv3d", src[2 + a], kernel[2 + a], stride[a], pad[a])?;
        }
        Ok(ConvGeometry {
            src,
            dst,
            kernel,
            stride,
            pad,
        })
    }

    /// Geometry for the adjoint map: `dst` is the transpose conv's input,
    /// `src` its output, extent `(in - 1) * stride - 2 * pad + k`.
    fn for_transpose(
        dst: [usize; 5],
        kernel: [usize; 5],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Self, TensorError> {
        if dst[1] != kernel[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose3d",
                lhs: dst.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        let mut src = [dst[0], kernel[1], 0, 0, 0];
        for a in 0..3 {
            if stride[a] == 0 {
                return Err(TensorError::Geometry {
                    op: "conv_transpose3d",
                    detail: "stride must be >= 1".into(),
                });
            }
            let grown = (dst[2 + a] - 1) * stride[a] + kernel[2 + a];
            let trimmed = grown.checked_sub(2 * pad[a]).unwrap_or(0);
            if trimmed == 0 {
                return Err(TensorError::Geometry {
                    op: "conv_transpose3d",
                    detail: format!("axis {a}: output extent would be empty"),
                });
            }
            src[2 + a] = trimmed;
        }
        Ok(ConvGeometry {
            src,
            dst,
            kernel,
            stride,
            pad,
        })
    }

    fn src_numel(&self) -> usize {
        self.src.iter().product()
    }

    fn dst_numel(&self) -> usize {
        self.dst.iter().product()
    }
}

/// Range of destination indices whose source index `o*stride + k_off - pad`
/// lands inside `[0, in_len)` for this kernel tap. Half-open, may be empty.
#[inline]
fn tap_range(out_len: usize, in_len: usize, k_off: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if k_off >= pad {
        0
    } else {
        (pad - k_off).div_ceil(stride)
    };
    let top = match (in_len + pad).checked_sub(k_off + 1) {
        Some(t) => t,
        None => return (0, 0),
    };
    let hi = (top / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Eight-lane dot product. The fixed lane structure keeps the reduction
/// order independent of data and lets the loop vectorize.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let ac = a.chunks_exact(8);
    let bc = b.chunks_exact(8);
    let (ra, rb) = (ac.remainder(), bc.remainder());
    for (ca, cb) in ac.zip(bc) {
        for l in 0..8 {
            lanes[l] += ca[l] * cb[l];
        }
    }
    let mut s = lanes.iter().sum::<f32>();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Forward cross-correlation src -> dst.
pub(crate) fn conv_apply(
    geom: &ConvGeometry,
    src: &[f32],
    w: &[f32],
    bias: Option<&[f32]>,
) -> Vec<f32> {
    let [kb, ci_n, n_i, w_i, h_i] = geom.src;
    let [_, co_n, n_o, w_o, h_o] = geom.dst;
    let [_, _, kt_n, kw_n, kh_n] = geom.kernel;
    let [st, sw, sh] = geom.stride;
    let [pt, pw, ph] = geom.pad;
    let src_cs = n_i * w_i * h_i;
    let dst_cs = n_o * w_o * h_o;
    let ker_cs = kt_n * kw_n * kh_n;

    let mut out = vec![0.0f32; geom.dst_numel()];
    for k in 0..kb {
        for co in 0..co_n {
            let o_ch = &mut out[(k * co_n + co) * dst_cs..][..dst_cs];
            if let Some(b) = bias {
                o_ch.fill(b[co]);
            }
            for ci in 0..ci_n {
                let x_ch = &src[(k * ci_n + ci) * src_cs..][..src_cs];
                let w_ch = &w[(co * ci_n + ci) * ker_cs..][..ker_cs];
                for kt in 0..kt_n {
                    let (t_lo, t_hi) = tap_range(n_o, n_i, kt, pt, st);
                    for kw in 0..kw_n {
                        let (w_lo, w_hi) = tap_range(w_o, w_i, kw, pw, sw);
                        for kh in 0..kh_n {
                            let (h_lo, h_hi) = tap_range(h_o, h_i, kh, ph, sh);
                            if h_lo >= h_hi {
                                continue;
                            }
                            let wv = w_ch[(kt * kw_n + kw) * kh_n + kh];
                            let span = h_hi - h_lo;
                            for no in t_lo..t_hi {
                                let ni = no * st + kt - pt;
                                for wo in w_lo..w_hi {
                                    let wi = wo * sw + kw - pw;
                                    let x_row = &x_ch[(ni * w_i + wi) * h_i..][..h_i];
                                    let o_row =
                                        &mut o_ch[(no * w_o + wo) * h_o..][..h_o];
                                    if sh == 1 {
                                        let x_seg = &x_row[h_lo + kh - ph..][..span];
                                        for (o, x) in
                                            o_row[h_lo..h_hi].iter_mut().zip(x_seg)
                                        {
                                            *o += wv * x;
                                        }
                                    } else {
                                        for ho in h_lo..h_hi {
                                            o_row[ho] += wv * x_row[ho * sh + kh - ph];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv_apply`]: scatters dst-side values back onto the source
/// grid. Serves as conv's input gradient and as the transpose conv forward
/// (with a per-source-channel bias).
pub(crate) fn conv_src_grad(
    geom: &ConvGeometry,
    d_dst: &[f32],
    w: &[f32],
    bias: Option<&[f32]>,
) -> Vec<f32> {
    let [kb, ci_n, n_i, w_i, h_i] = geom.src;
    let [_, co_n, n_o, w_o, h_o] = geom.dst;
    let [_, _, kt_n, kw_n, kh_n] = geom.kernel;
    let [st, sw, sh] = geom.stride;
    let [pt, pw, ph] = geom.pad;
    let src_cs = n_i * w_i * h_i;
    let dst_cs = n_o * w_o * h_o;
    let ker_cs = kt_n * kw_n * kh_n;

    let mut out = vec![0.0f32; geom.src_numel()];
    if let Some(b) = bias {
        for k in 0..kb {
            for ci in 0..ci_n {
                out[(k * ci_n + ci) * src_cs..][..src_cs].fill(b[ci]);
            }
        }
    }
    for k in 0..kb {
        for co in 0..co_n {
            let d_ch = &d_dst[(k * co_n + co) * dst_cs..][..dst_cs];
            for ci in 0..ci_n {
                let x_ch = &mut out[(k * ci_n + ci) * src_cs..][..src_cs];
                let w_ch = &w[(co * ci_n + ci) * ker_cs..][..ker_cs];
                for kt in 0..kt_n {
                    let (t_lo, t_hi) = tap_range(n_o, n_i, kt, pt, st);
                    for kw in 0..kw_n {
                        let (w_lo, w_hi) = tap_range(w_o, w_i, kw, pw, sw);
                        for kh in 0..kh_n {
                            let (h_lo, h_hi) = tap_range(h_o, h_i, kh, ph, sh);
                            if h_lo >= h_hi {
                                continue;
                            }
                            let wv = w_ch[(kt * kw_n + kw) * kh_n + kh];
                            let span = h_hi - h_lo;
                            for no in t_lo..t_hi {
                                let ni = no * st + kt - pt;
                                for wo in w_lo..w_hi {
                                    let wi = wo * sw + kw - pw;
                                    let x_row =
                                        &mut x_ch[(ni * w_i + wi) * h_i..][..h_i];
                                    let d_row = &d_ch[(no * w_o + wo) * h_o..][..h_o];
                                    if sh == 1 {
                                        let x_seg = &mut x_row[h_lo + kh - ph..][..span];
                                        for (x, d) in
                                            x_seg.iter_mut().zip(&d_row[h_lo..h_hi])
                                        {
                                            *x += wv * d;
                                        }
                                    } else {
                                        for ho in h_lo..h_hi {
                                            x_row[ho * sh + kh - ph] += wv * d_row[ho];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient w.r.t. the kernel: correlation of source values with dst-side
/// gradients. Row dots are accumulated into f64 per weight element so the
/// sum over a whole batch stays well conditioned.
pub(crate) fn conv_weight_grad(geom: &ConvGeometry, src: &[f32], d_dst: &[f32]) -> Vec<f32> {
    let [kb, ci_n, n_i, w_i, h_i] = geom.src;
    let [_, co_n, n_o, w_o, h_o] = geom.dst;
    let [_, _, kt_n, kw_n, kh_n] = geom.kernel;
    let [st, sw, sh] = geom.stride;
    let [pt, pw, ph] = geom.pad;
    let src_cs = n_i * w_i * h_i;
    let dst_cs = n_o * w_o * h_o;
    let ker_cs = kt_n * kw_n * kh_n;

    let mut wg = vec![0.0f32; geom.kernel.iter().product()];
    for co in 0..co_n {
        for ci in 0..ci_n {
            let w_ch = &mut wg[(co * ci_n + ci) * ker_cs..][..ker_cs];
            for kt in 0..kt_n {
                let (t_lo, t_hi) = tap_range(n_o, n_i, kt, pt, st);
                for kw in 0..kw_n {
                    let (w_lo, w_hi) = tap_range(w_o, w_i, kw, pw, sw);
                    for kh in 0..kh_n {
                        let (h_lo, h_hi) = tap_range(h_o, h_i, kh, ph, sh);
                        let mut acc = 0.0f64;
                        if h_lo < h_hi {
                            let span = h_hi - h_lo;
                            for k in 0..kb {
                                let x_ch = &src[(k * ci_n + ci) * src_cs..][..src_cs];
                                let d_ch = &d_dst[(k * co_n + co) * dst_cs..][..dst_cs];
                                for no in t_lo..t_hi {
                                    let ni = no * st + kt - pt;
                                    for wo in w_lo..w_hi {
                                        let wi = wo * sw + kw - pw;
                                        let d_row =
                                            &d_ch[((no * w_o + wo) * h_o + h_lo)..][..span];
                                        let x_row = &x_ch[(ni * w_i + wi) * h_i..][..h_i];
                                        let r = if sh == 1 {
                                            dot(d_row, &x_row[h_lo + kh - ph..][..span])
                                        } else {
                                            let mut s = 0.0f32;
                                            for (j, d) in d_row.iter().enumerate() {
                                                let ho = h_lo + j;
                                                s += d * x_row[ho * sh + kh - ph];
                                            }
                                            s
                                        };
                                        acc += r as f64;
                                    }
                                }
                            }
                        }
                        w_ch[(kt * kw_n + kw) * kh_n + kh] = acc as f32;
                    }
                }
            }
        }
    }
    wg
}

/// Per-channel sum of a 5-d buffer (bias gradients).
pub(crate) fn channel_sum(data: &[f32], shape: &[usize; 5]) -> Vec<f32> {
    let [kb, c_n, n, w, h] = *shape;
    let cs = n * w * h;
    let mut acc = vec![0.0f64; c_n];
    for k in 0..kb {
        for c in 0..c_n {
            let s: f64 = data[(k * c_n + c) * cs..][..cs]
                .iter()
                .map(|v| *v as f64)
                .sum();
            acc[c] += s;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

fn check_bias(op: &'static str, bias: &Tensor, channels: usize) -> Result<(), TensorError> {
    if bias.shape() != [channels] {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: bias.shape().to_vec(),
            rhs: vec![channels],
        });
    }
    Ok(())
}

impl Tensor {
    /// Strided 3-d cross-correlation with per-output-channel bias.
    pub fn conv3d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
    ) -> Result<Tensor, TensorError> {
        let src = expect_5d("conv3d", self)?;
        let ker = expect_5d("conv3d", weight)?;
        let geom = ConvGeometry::for_conv(
            src,
            ker,
            [stride.0, stride.1, stride.2],
            [padding.0, padding.1, padding.2],
        )?;
        check_bias("conv3d", bias, geom.kernel[0])?;
        let out = conv_apply(&geom, &self.data(), &weight.data(), Some(&bias.data()));
        let shape = geom.dst.to_vec();
        Ok(Tensor::from_op(
            shape,
            out,
            OpNode::new(
                Op::Conv3d { geom },
                vec![self.clone(), weight.clone(), bias.clone()],
            ),
        ))
    }

    /// Adjoint of [`Tensor::conv3d`] under the same kernel/stride/padding,
    /// plus a per-output-channel bias. Output extent is
    /// `(in - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose3d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
    ) -> Result<Tensor, TensorError> {
        let dst = expect_5d("conv_transpose3d", self)?;
        let ker = expect_5d("conv_transpose3d", weight)?;
        let geom = ConvGeometry::for_transpose(
            dst,
            ker,
            [stride.0, stride.1, stride.2],
            [padding.0, padding.1, padding.2],
        )?;
        check_bias("conv_transpose3d", bias, geom.kernel[1])?;
        let out = conv_src_grad(&geom, &self.data(), &weight.data(), Some(&bias.data()));
        let shape = geom.src.to_vec();
        Ok(Tensor::from_op(
            shape,
            out,
            OpNode::new(
                Op::ConvTranspose3d { geom },
                vec![self.clone(), weight.clone(), bias.clone()],
            ),
        ))
    }
}
