//! Hourglass 3-d CNN shared by the mask, background, and benchmark models.
//!
//! The encoder doubles channels and halves the spatial extents per stage
//! (convolution + ReLU + spatial max-pool with saved indices); the decoder
//! mirrors it with max-unpool, channel concatenation of the mirrored
//! encoder activation, transpose convolution, and ReLU. A 1x1x1 projection
//! reduces to one channel, then the head runs: sigmoid for per-pixel mask
//! probabilities, or a frame-wise mean that collapses time to a single
//! background frame. Time is never pooled, so masks stay per-frame.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::TensorError;
use crate::jht;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid hourglass config: {0}")]
    InvalidConfig(String),
    #[error("input shape {shape:?} is not compatible: {detail}")]
    BadInput { shape: Vec<usize>, detail: String },
    #[error("model head is {actual:?}, expected {expected:?}")]
    HeadMismatch { expected: Head, actual: Head },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Jht(#[from] jht::JhtError),
    #[error("checkpoint manifest: {0}")]
    Json(#[from] serde_json::Error),
}

/// Output head: per-pixel probabilities or a single mean frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Sigmoid,
    FrameMean,
}

/// Geometry of the hourglass. `kernels`/`strides`/`paddings` hold one
/// (time, width, height) triple per encoder stage; the decoder mirrors
/// them. Pooling applies the same window at every stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HourglassConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub kernels: Vec<(usize, usize, usize)>,
    pub strides: Vec<(usize, usize, usize)>,
    pub paddings: Vec<(usize, usize, usize)>,
    pub pool_kernel: (usize, usize, usize),
    pub pool_stride: (usize, usize, usize),
}

impl HourglassConfig {
    /// Depth-2, 8-channel hourglass: 3x3x3 convolutions with unit padding
    /// and stride, pooling over space only.
    pub fn default_arch() -> Self {
        Self::with_scale(2, 8)
    }

    pub fn with_scale(depth: usize, base_channels: usize) -> Self {
        HourglassConfig {
            depth,
            base_channels,
            kernels: vec![(3, 3, 3); depth],
            strides: vec![(1, 1, 1); depth],
            paddings: vec![(1, 1, 1); depth],
            pool_kernel: (1, 2, 2),
            pool_stride: (1, 2, 2),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(ModelError::InvalidConfig(
                "depth and base_channels must be >= 1".into(),
            ));
        }
        for (name, v) in [
            ("kernels", &self.kernels),
            ("strides", &self.strides),
            ("paddings", &self.paddings),
        ] {
            if v.len() != self.depth {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} must list one triple per stage ({} expected, {} given)",
                    self.depth,
                    v.len()
                )));
            }
        }
        // The decoder reuses encoder extents through unpool indices, which
        // only works when convolutions preserve extents.
        for s in 0..self.depth {
            let (k, st, p) = (self.kernels[s], self.strides[s], self.paddings[s]);
            if st != (1, 1, 1) {
                return Err(ModelError::InvalidConfig(
                    "stage convolutions must use stride 1; pooling handles downsampling".into(),
                ));
            }
            for (kk, pp) in [(k.0, p.0), (k.1, p.1), (k.2, p.2)] {
                if kk != 2 * pp + 1 {
                    return Err(ModelError::InvalidConfig(format!(
                        "stage {s}: kernel {kk} with padding {pp} does not preserve extents"
                    )));
                }
            }
        }
        if self.pool_kernel.0 != 1 || self.pool_stride.0 != 1 {
            return Err(ModelError::InvalidConfig(
                "pooling over time would break the per-frame mask contract".into(),
            ));
        }
        if self.pool_kernel != self.pool_stride {
            return Err(ModelError::InvalidConfig(
                "pool kernel must equal pool stride (non-overlapping windows)".into(),
            ));
        }
        Ok(())
    }

    /// Channel count produced by encoder stage `s` (doubling per stage).
    fn stage_channels(&self, s: usize) -> usize {
        self.base_channels << s
    }

    /// Closed-form number of parameters implied by the config.
    pub fn parameter_count(&self) -> usize {
        let mut total = 0usize;
        let kvol = |k: (usize, usize, usize)| k.0 * k.1 * k.2;
        let mut in_ch = 1;
        for s in 0..self.depth {
            let out_ch = self.stage_channels(s);
            total += out_ch * in_ch * kvol(self.kernels[s]) + out_ch;
            in_ch = out_ch;
        }
        for s in (0..self.depth).rev() {
            // unpooled channels plus the mirrored skip concat
            let cat_ch = in_ch + self.stage_channels(s);
            let out_ch = self.base_channels;
            total += cat_ch * out_ch * kvol(self.kernels[s]) + out_ch;
            in_ch = out_ch;
        }
        total + in_ch + 1 // 1x1x1 projection
    }
}

struct ConvLayer {
    weight: Tensor,
    bias: Tensor,
}

/// A built hourglass with its parameters and head.
pub struct Model {
    pub config: HourglassConfig,
    pub head: Head,
    pub seed: u64,
    encoder: Vec<ConvLayer>,
    decoder: Vec<ConvLayer>,
    projection: ConvLayer,
}

fn xavier_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::param(shape, data).expect("shape/data agree by construction")
}

/// Builds an hourglass with seeded Xavier-uniform weights and zero biases.
pub fn build_hourglass(config: &HourglassConfig, head: Head, seed: u64) -> Result<Model, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kvol = |k: (usize, usize, usize)| k.0 * k.1 * k.2;

    let mut encoder = Vec::with_capacity(config.depth);
    let mut in_ch = 1usize;
    for s in 0..config.depth {
        let out_ch = config.stage_channels(s);
        let k = config.kernels[s];
        let weight = xavier_uniform(
            &mut rng,
            &[out_ch, in_ch, k.0, k.1, k.2],
            in_ch * kvol(k),
            out_ch * kvol(k),
        );
        let bias = Tensor::param(&[out_ch], vec![0.0; out_ch])?;
        encoder.push(ConvLayer { weight, bias });
        in_ch = out_ch;
    }

    let mut decoder = Vec::with_capacity(config.depth);
    for s in (0..config.depth).rev() {
        let cat_ch = in_ch + config.stage_channels(s);
        let out_ch = config.base_channels;
        let k = config.kernels[s];
        // transpose-conv kernels map cat_ch -> out_ch, stored [in, out, k..]
        let weight = xavier_uniform(
            &mut rng,
            &[cat_ch, out_ch, k.0, k.1, k.2],
            cat_ch * kvol(k),
            out_ch * kvol(k),
        );
        let bias = Tensor::param(&[out_ch], vec![0.0; out_ch])?;
        decoder.push(ConvLayer { weight, bias });
        in_ch = out_ch;
    }

    let weight = xavier_uniform(&mut rng, &[1, in_ch, 1, 1, 1], in_ch, 1);
    let bias = Tensor::param(&[1], vec![0.0])?;
    let projection = ConvLayer { weight, bias };

    Ok(Model {
        config: config.clone(),
        head,
        seed,
        encoder,
        decoder,
        projection,
    })
}

impl Model {
    /// Parameters in a fixed order: encoder stages, decoder stages,
    /// projection; weight before bias.
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for layer in self.encoder.iter().chain(&self.decoder) {
            out.push(layer.weight.clone());
            out.push(layer.bias.clone());
        }
        out.push(self.projection.weight.clone());
        out.push(self.projection.bias.clone());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<(), ModelError> {
        let s = input.shape();
        if s.len() != 5 || s[1] != 1 {
            return Err(ModelError::BadInput {
                shape: s.to_vec(),
                detail: "expected [batch, 1, frames, width, height]".into(),
            });
        }
        let div = self.pool_factor();
        for (axis, extent) in [("width", s[3]), ("height", s[4])] {
            if extent % div != 0 || extent / div == 0 {
                return Err(ModelError::BadInput {
                    shape: s.to_vec(),
                    detail: format!(
                        "{axis} extent {extent} is not divisible by the pooling factor {div}"
                    ),
                });
            }
        }
        Ok(())
    }

    fn pool_factor(&self) -> usize {
        self.config.pool_stride.1.pow(self.config.depth as u32)
    }

    /// Runs the hourglass body and head.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        let logits = self.forward_logits(input)?;
        let out = match self.head {
            Head::Sigmoid => logits.sigmoid(),
            Head::FrameMean => logits.mean_over_time()?,
        };
        Ok(out)
    }

    /// Per-pixel target probabilities; requires the sigmoid head.
    pub fn forward_mask(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        if self.head != Head::Sigmoid {
            return Err(ModelError::HeadMismatch {
                expected: Head::Sigmoid,
                actual: self.head,
            });
        }
        self.forward(input)
    }

    /// Single pseudo-background frame; requires the frame-mean head.
    pub fn forward_background(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        if self.head != Head::FrameMean {
            return Err(ModelError::HeadMismatch {
                expected: Head::FrameMean,
                actual: self.head,
            });
        }
        self.forward(input)
    }

    /// Raw projection output before the head. Also serves tests that pin
    /// the head semantics against the captured last-layer activation.
    pub fn forward_logits(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        self.check_input(input)?;
        let cfg = &self.config;
        let mut x = input.clone();
        let mut skips = Vec::with_capacity(cfg.depth);
        for (s, layer) in self.encoder.iter().enumerate() {
            let a = x
                .conv3d(&layer.weight, &layer.bias, cfg.strides[s], cfg.paddings[s])?
                .relu();
            let (pooled, indices) = a.maxpool3d(cfg.pool_kernel, cfg.pool_stride)?;
            skips.push((a, indices));
            x = pooled;
        }
        for (d, layer) in self.decoder.iter().enumerate() {
            let s = cfg.depth - 1 - d;
            let (skip, indices) = &skips[s];
            let unpooled = x.maxunpool3d(indices, indices.input_shape())?;
            let cat = unpooled.concat_channels(skip)?;
            x = cat
                .conv_transpose3d(&layer.weight, &layer.bias, cfg.strides[s], cfg.paddings[s])?
                .relu();
        }
        Ok(x.conv3d(&self.projection.weight, &self.projection.bias, (1, 1, 1), (0, 0, 0))?)
    }

    /// Zeroes the projection layer; with it, logits are identically zero.
    pub fn zero_projection(&self) {
        self.projection.weight.data_mut().fill(0.0);
        self.projection.bias.data_mut().fill(0.0);
    }
}

/// Checkpoint manifest stored next to the parameter tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: HourglassConfig,
    pub head: Head,
    pub seed: u64,
    pub epoch: usize,
    pub params: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Writes one JHT1 file per parameter plus a JSON manifest.
pub fn save_checkpoint(
    model: &Model,
    dir: &Path,
    epoch: usize,
    config_hash: Option<&str>,
) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    let params = model.parameters();
    let mut names = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        let name = format!("param_{i:03}.jht");
        jht::save_tensor(&dir.join(&name), p)?;
        names.push(name);
    }
    let meta = CheckpointMeta {
        config: model.config.clone(),
        head: model.head,
        seed: model.seed,
        epoch,
        params: names,
        config_hash: config_hash.map(str::to_string),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Restores a model bit-identically from [`save_checkpoint`] output.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointMeta), ModelError> {
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let model = build_hourglass(&meta.config, meta.head, meta.seed)?;
    let params = model.parameters();
    if params.len() != meta.params.len() {
        return Err(ModelError::Checkpoint(format!(
            "manifest lists {} parameters, model has {}",
            meta.params.len(),
            params.len()
        )));
    }
    for (p, name) in params.iter().zip(&meta.params) {
        let loaded = jht::load_tensor(&dir.join(name))?;
        if loaded.shape() != p.shape() {
            return Err(ModelError::Checkpoint(format!(
                "{name}: shape {:?} does not match model shape {:?}",
                loaded.shape(),
                p.shape()
            )));
        }
        p.data_mut().copy_from_slice(&loaded.data());
    }
    Ok((model, meta))
}

/// Paths of the per-model checkpoint directories under a run directory.
pub fn checkpoint_dir(run_dir: &Path, model_name: &str) -> PathBuf {
    run_dir.join(model_name)
}
