//! Shared test support: independent f64 reference implementations of every
//! operator under test (straight-line loops, no reuse of the library's
//! kernels) and a central-finite-difference gradient checker that evaluates
//! those references in 64-bit shadow arithmetic.

#![allow(dead_code)]

use jht_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Random values in [-2, 2] with a dead zone around relu/pool kink points
/// so central differences stay on one side of every kink.
pub fn rand_vec_kink_safe(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.05..2.0f32);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn mean64(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------
// Reference operators (f64, straight-line)
// ---------------------------------------------------------------------------

pub mod oracle {
    /// Direct six-nested-loop cross-correlation.
    /// src `[K,Ci,N,W,H]`, kernel `[Co,Ci,kt,kw,kh]`; returns (out, shape).
    pub fn conv3d(
        src_shape: [usize; 5],
        ker_shape: [usize; 5],
        stride: [usize; 3],
        pad: [usize; 3],
        src: &[f64],
        w: &[f64],
        b: &[f64],
    ) -> (Vec<f64>, [usize; 5]) {
        let [kb, ci, n_i, w_i, h_i] = src_shape;
        let [co, _, kt, kw, kh] = ker_shape;
        let ext = |i: usize, k: usize, a: usize| (i + 2 * pad[a] - k) / stride[a] + 1;
        let (n_o, w_o, h_o) = (ext(n_i, kt, 0), ext(w_i, kw, 1), ext(h_i, kh, 2));
        let mut out = vec![0.0f64; kb * co * n_o * w_o * h_o];
        let mut j = 0;
        for k in 0..kb {
            for oc in 0..co {
                for no in 0..n_o {
                    for wo in 0..w_o {
                        for ho in 0..h_o {
                            let mut acc = b[oc];
                            for c in 0..ci {
                                for t in 0..kt {
                                    let ni = (no * stride[0] + t) as isize - pad[0] as isize;
                                    if ni < 0 || ni >= n_i as isize {
                                        continue;
                                    }
                                    for x in 0..kw {
                                        let wi = (wo * stride[1] + x) as isize - pad[1] as isize;
                                        if wi < 0 || wi >= w_i as isize {
                                            continue;
                                        }
                                        for y in 0..kh {
                                            let hi =
                                                (ho * stride[2] + y) as isize - pad[2] as isize;
                                            if hi < 0 || hi >= h_i as isize {
                                                continue;
                                            }
                                            let sv = src[(((k * ci + c) * n_i
                                                + ni as usize)
                                                * w_i
                                                + wi as usize)
                                                * h_i
                                                + hi as usize];
                                            let wv = w[(((oc * ci + c) * kt + t) * kw + x) * kh
                                                + y];
                                            acc += sv * wv;
                                        }
                                    }
                                }
                            }
                            out[j] = acc;
                            j += 1;
                        }
                    }
                }
            }
        }
        (out, [kb, co, n_o, w_o, h_o])
    }

    /// Direct scatter-form transpose convolution.
    /// input `[K,A,N,W,H]`, kernel `[A,B,kt,kw,kh]`; output extent
    /// `(in-1)*stride - 2*pad + k`. Returns (out, shape).
    pub fn conv_transpose3d(
        in_shape: [usize; 5],
        ker_shape: [usize; 5],
        stride: [usize; 3],
        pad: [usize; 3],
        input: &[f64],
        w: &[f64],
        b: &[f64],
    ) -> (Vec<f64>, [usize; 5]) {
        let [kb, a_ch, n_i, w_i, h_i] = in_shape;
        let [_, b_ch, kt, kw, kh] = ker_shape;
        let ext = |i: usize, k: usize, ax: usize| (i - 1) * stride[ax] + k - 2 * pad[ax];
        let (n_o, w_o, h_o) = (ext(n_i, kt, 0), ext(w_i, kw, 1), ext(h_i, kh, 2));
        let mut out = vec![0.0f64; kb * b_ch * n_o * w_o * h_o];
        for k in 0..kb {
            for oc in 0..b_ch {
                for v in out[(k * b_ch + oc) * n_o * w_o * h_o..][..n_o * w_o * h_o].iter_mut() {
                    *v = b[oc];
                }
            }
        }
        for k in 0..kb {
            for ac in 0..a_ch {
                for ni in 0..n_i {
                    for wi in 0..w_i {
                        for hi in 0..h_i {
                            let uv = input[(((k * a_ch + ac) * n_i + ni) * w_i + wi) * h_i + hi];
                            for oc in 0..b_ch {
                                for t in 0..kt {
                                    let no = (ni * stride[0] + t) as isize - pad[0] as isize;
                                    if no < 0 || no >= n_o as isize {
                                        continue;
                                    }
                                    for x in 0..kw {
                                        let wo =
                                            (wi * stride[1] + x) as isize - pad[1] as isize;
                                        if wo < 0 || wo >= w_o as isize {
                                            continue;
                                        }
                                        for y in 0..kh {
                                            let ho = (hi * stride[2] + y) as isize
                                                - pad[2] as isize;
                                            if ho < 0 || ho >= h_o as isize {
                                                continue;
                                            }
                                            let wv = w[(((ac * b_ch + oc) * kt + t) * kw + x)
                                                * kh
                                                + y];
                                            out[(((k * b_ch + oc) * n_o + no as usize) * w_o
                                                + wo as usize)
                                                * h_o
                                                + ho as usize] += uv * wv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        (out, [kb, b_ch, n_o, w_o, h_o])
    }

    /// Per-window scan max pooling with lowest-flat-index tie break.
    /// Returns (values, argmax flat indices, out_shape).
    pub fn maxpool3d(
        shape: [usize; 5],
        kernel: [usize; 3],
        stride: [usize; 3],
        data: &[f64],
    ) -> (Vec<f64>, Vec<usize>, [usize; 5]) {
        let [kb, c_n, n_i, w_i, h_i] = shape;
        let ext = |i: usize, a: usize| (i - kernel[a]) / stride[a] + 1;
        let (n_o, w_o, h_o) = (ext(n_i, 0), ext(w_i, 1), ext(h_i, 2));
        let mut values = Vec::new();
        let mut indices = Vec::new();
        for k in 0..kb {
            for c in 0..c_n {
                let base = (k * c_n + c) * n_i * w_i * h_i;
                for no in 0..n_o {
                    for wo in 0..w_o {
                        for ho in 0..h_o {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = 0usize;
                            for dn in 0..kernel[0] {
                                for dw in 0..kernel[1] {
                                    for dh in 0..kernel[2] {
                                        let idx = base
                                            + ((no * stride[0] + dn) * w_i
                                                + (wo * stride[1] + dw))
                                                * h_i
                                            + (ho * stride[2] + dh);
                                        if data[idx] > best {
                                            best = data[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                            }
                            values.push(best);
                            indices.push(best_idx);
                        }
                    }
                }
            }
        }
        (values, indices, [kb, c_n, n_o, w_o, h_o])
    }

    /// Straight-line evaluation of the dual loss chain:
    /// delta -> delta^2 -> -ln(j+eps)*delta^2 -> mean -> + alpha*mean(j).
    /// `input` is `[K,1,N,W,H]`-flat, `background` `[K,1,1,W,H]`-flat.
    pub fn dual_loss(
        input: &[f64],
        mask: &[f64],
        background: &[f64],
        batch: usize,
        frames: usize,
        plane: usize,
        alpha: f64,
        eps: f64,
    ) -> f64 {
        let mut masked_sum = 0.0;
        for k in 0..batch {
            for n in 0..frames {
                for p in 0..plane {
                    let i = (k * frames + n) * plane + p;
                    let delta = input[i] - background[k * plane + p];
                    let delta_sq = delta * delta;
                    masked_sum += -(mask[i] + eps).ln() * delta_sq;
                }
            }
        }
        let total_elems = (batch * frames * plane) as f64;
        let background_term = masked_sum / total_elems;
        let mask_cost = alpha * mask.iter().sum::<f64>() / mask.len() as f64;
        background_term + mask_cost
    }

    /// Straight-line mean binary cross entropy with 1e-12 log clamps.
    pub fn bce(pred: &[f64], target: &[f64]) -> f64 {
        let mut s = 0.0;
        for (&p, &y) in pred.iter().zip(target) {
            s += y * p.max(1e-12).ln() + (1.0 - y) * (1.0 - p).max(1e-12).ln();
        }
        -s / pred.len() as f64
    }

    /// Straight-line coupled-L2 Adam trace in f32, matching precision of
    /// the implementation so trajectories are comparable to 1e-6.
    #[allow(clippy::too_many_arguments)]
    pub fn adam_trace(
        start: &[f32],
        grads_per_step: &[Vec<f32>],
        lr: f32,
        beta1: f32,
        beta2: f32,
        eps: f32,
        weight_decay: f32,
    ) -> Vec<f32> {
        let mut p = start.to_vec();
        let mut m = vec![0.0f32; p.len()];
        let mut v = vec![0.0f32; p.len()];
        for (step, grads) in grads_per_step.iter().enumerate() {
            let t = (step + 1) as i32;
            for j in 0..p.len() {
                let g = grads[j] + weight_decay * p[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / (1.0 - beta1.powi(t));
                let v_hat = v[j] / (1.0 - beta2.powi(t));
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        p
    }

    /// 1-d grid search minimizer of `-ln(j+eps)*delta_sq + alpha*j` over
    /// j in [0,1] with the given step.
    pub fn grid_search_mask(delta_sq: f64, alpha: f64, eps: f64, step: f64) -> f64 {
        let mut best_j = 0.0;
        let mut best_v = f64::INFINITY;
        let steps = (1.0 / step).round() as usize;
        for i in 0..=steps {
            let j = i as f64 * step;
            let v = -(j + eps).ln() * delta_sq + alpha * j;
            if v < best_v {
                best_v = v;
                best_j = j;
            }
        }
        best_j
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// Central finite differences with a 64-bit shadow evaluation. The
/// reverse-mode gradient of `forward` (an f32 graph producing a scalar) is
/// compared against `(shadow(x+h) - shadow(x-h)) / 2h` where `shadow`
/// re-evaluates the same function in f64 from scratch.
pub struct GradCheck {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
    pub max_coords_per_input: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-3,
            rel_tol: 1e-3,
            abs_floor: 1e-6,
            max_coords_per_input: 64,
        }
    }
}

impl GradCheck {
    pub fn run(
        &self,
        rng: &mut ChaCha8Rng,
        inputs: &[Tensor],
        forward: impl Fn(&[Tensor]) -> Tensor,
        shadow: impl Fn(&[Vec<f64>]) -> f64,
    ) {
        let loss = forward(inputs);
        assert_eq!(loss.numel(), 1, "gradcheck target must be scalar");
        loss.backward().expect("backward");
        let base: Vec<Vec<f64>> = inputs.iter().map(|t| to_f64(&t.to_vec())).collect();

        for (i, t) in inputs.iter().enumerate() {
            let grad = t
                .grad()
                .unwrap_or_else(|| panic!("input {i} received no gradient"));
            let n = grad.len();
            let coords: Vec<usize> = if n <= self.max_coords_per_input {
                (0..n).collect()
            } else {
                (0..self.max_coords_per_input)
                    .map(|_| rng.gen_range(0..n))
                    .collect()
            };
            for c in coords {
                let mut plus = base.clone();
                plus[i][c] += self.step;
                let f_plus = shadow(&plus);
                let mut minus = base.clone();
                minus[i][c] -= self.step;
                let f_minus = shadow(&minus);
                let fd = (f_plus - f_minus) / (2.0 * self.step);
                let an = grad[c] as f64;
                let err = (an - fd).abs();
                let bound = self.rel_tol * an.abs().max(fd.abs()).max(self.abs_floor / self.rel_tol);
                assert!(
                    err <= bound,
                    "input {i} coord {c}: analytic {an:.8e} vs fd {fd:.8e} (err {err:.3e} > {bound:.3e})"
                );
            }
        }
    }
}
