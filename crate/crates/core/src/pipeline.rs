//! Training orchestration: the joint unsupervised run, the supervised
//! baseline run, test-set evaluation, and batch plumbing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::no_grad;
use crate::error::TensorError;
use crate::eval::{rescale_unit, sweep, EvalError, SweepTable};
use crate::loss::{bce_loss, dual_loss, LossError};
use crate::model::{Head, Model, ModelError};
use crate::optim::Adam;
use crate::panel::{render_panels, PanelError, RenderedPanels};
use crate::scene::Sample;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("the {0} sample set is empty")]
    EmptySet(&'static str),
    #[error("models are incompatible: {0}")]
    MismatchedModels(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Training hyper-parameters. Defaults follow the reference regime:
/// 100 epochs of Adam with weight decay 0.01, the background and
/// supervised models at 5e-4, the mask model an order of magnitude lower
/// so it cannot freeze early background errors into the mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_jekyll: f32,
    pub lr_hyde: f32,
    pub lr_utterson: f32,
    pub weight_decay: f32,
    pub alpha: f32,
    pub epsilon: f32,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            lr_jekyll: 5.0e-5,
            lr_hyde: 5.0e-4,
            lr_utterson: 5.0e-4,
            weight_decay: 0.01,
            alpha: 1.0,
            epsilon: 0.001,
            seed: 0,
            shuffle: true,
        }
    }
}

/// One epoch of the loss record. Deliberately excludes wall-clock so the
/// serialized record is identical across runs with one seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Full run outcome: the per-epoch records plus run-level metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_s: f64,
    pub config: TrainConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<String>,
}

impl RunRecord {
    /// One JSON object per epoch, newline separated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Stacks samples into a `[K, 1, N, W, H]` batch.
pub fn stack_inputs(samples: &[&Sample]) -> Result<Tensor, PipelineError> {
    stack(samples, |s| &s.input)
}

pub fn stack_labels(samples: &[&Sample]) -> Result<Tensor, PipelineError> {
    stack(samples, |s| &s.label)
}

fn stack(
    samples: &[&Sample],
    pick: impl Fn(&Sample) -> &Tensor,
) -> Result<Tensor, PipelineError> {
    if samples.is_empty() {
        return Err(PipelineError::EmptySet("batch"));
    }
    let first = pick(samples[0]).shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * pick(samples[0]).numel());
    for s in samples {
        let t = pick(s);
        if t.shape() != first {
            return Err(PipelineError::MismatchedModels(format!(
                "sample shapes differ: {:?} vs {first:?}",
                t.shape()
            )));
        }
        data.extend_from_slice(&t.data());
    }
    let shape = vec![samples.len(), first[0], first[1], first[2], first[3]];
    Ok(Tensor::from_vec(&shape, data)?)
}

fn epoch_order(n: usize, cfg: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
    }
    order
}

fn batches<'a>(samples: &'a [Sample], order: &[usize], batch: usize) -> Vec<Vec<&'a Sample>> {
    order
        .chunks(batch.max(1))
        .map(|chunk| chunk.iter().map(|&i| &samples[i]).collect())
        .collect()
}

fn check_finite(
    loss: f32,
    epoch: usize,
    batch: usize,
    detail: impl FnOnce() -> String,
) -> Result<(), PipelineError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(PipelineError::Divergence {
            epoch,
            batch,
            detail: detail(),
        })
    }
}

fn guard_output(
    t: &Tensor,
    what: &str,
    epoch: usize,
    batch: usize,
) -> Result<(), PipelineError> {
    t.validate_finite(what).map_err(|e| PipelineError::Divergence {
        epoch,
        batch,
        detail: e.to_string(),
    })
}

/// Joint unsupervised training: per batch, both models run forward on the
/// same input, the coupled loss backpropagates once, then each parameter
/// set takes its own optimizer step at its own learning rate.
pub fn train_unsupervised(
    jekyll: &Model,
    hyde: &Model,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<RunRecord, PipelineError> {
    if train.is_empty() {
        return Err(PipelineError::EmptySet("training"));
    }
    if jekyll.head != Head::Sigmoid || hyde.head != Head::FrameMean {
        return Err(PipelineError::MismatchedModels(
            "joint training needs a sigmoid-head mask model and a frame-mean background model"
                .into(),
        ));
    }
    if jekyll.config != hyde.config {
        return Err(PipelineError::MismatchedModels(
            "mask and background models must share one hourglass geometry".into(),
        ));
    }
    let started = Instant::now();
    let mut opt_jekyll = Adam::new(jekyll.parameters(), cfg.lr_jekyll, cfg.weight_decay);
    let mut opt_hyde = Adam::new(hyde.parameters(), cfg.lr_hyde, cfg.weight_decay);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg, epoch);
        let mut train_sum = 0.0f64;
        let mut n_batches = 0usize;
        for (b, batch) in batches(train, &order, cfg.batch_size).into_iter().enumerate() {
            let x = stack_inputs(&batch)?;
            let mask = jekyll.forward_mask(&x)?;
            let background = hyde.forward_background(&x)?;
            guard_output(&mask, "mask output", epoch, b)?;
            guard_output(&background, "background output", epoch, b)?;
            let lb = dual_loss(&x, &mask, &background, cfg.alpha, cfg.epsilon)?;
            let total = lb.total.item()?;
            check_finite(total, epoch, b, || lb.to_json())?;
            lb.total.backward()?;
            opt_jekyll.step()?;
            opt_hyde.step()?;
            opt_jekyll.zero_grads();
            opt_hyde.zero_grads();
            train_sum += total as f64;
            n_batches += 1;
        }
        debug_assert_eq!(opt_jekyll.steps(), opt_hyde.steps());

        let mut val_sum = 0.0f64;
        let mut val_batches = 0usize;
        for batch in batches(val, &(0..val.len()).collect::<Vec<_>>(), cfg.batch_size) {
            let loss = no_grad(|| -> Result<f32, PipelineError> {
                let x = stack_inputs(&batch)?;
                let mask = jekyll.forward_mask(&x)?;
                let background = hyde.forward_background(&x)?;
                let lb = dual_loss(&x, &mask, &background, cfg.alpha, cfg.epsilon)?;
                Ok(lb.total.item()?)
            })?;
            val_sum += loss as f64;
            val_batches += 1;
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: train_sum / n_batches as f64,
            val_loss: if val_batches > 0 {
                val_sum / val_batches as f64
            } else {
                f64::NAN
            },
        });
    }
    Ok(RunRecord {
        epochs,
        wall_clock_s: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
        checkpoints: Vec::new(),
    })
}

/// Supervised baseline training against the label masks with mean BCE.
pub fn train_supervised(
    model: &Model,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<RunRecord, PipelineError> {
    if train.is_empty() {
        return Err(PipelineError::EmptySet("training"));
    }
    if model.head != Head::Sigmoid {
        return Err(PipelineError::MismatchedModels(
            "the supervised model needs a sigmoid head".into(),
        ));
    }
    let started = Instant::now();
    let mut opt = Adam::new(model.parameters(), cfg.lr_utterson, cfg.weight_decay);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg, epoch);
        let mut train_sum = 0.0f64;
        let mut n_batches = 0usize;
        for (b, batch) in batches(train, &order, cfg.batch_size).into_iter().enumerate() {
            let x = stack_inputs(&batch)?;
            let y = stack_labels(&batch)?;
            let pred = model.forward_mask(&x)?;
            guard_output(&pred, "prediction output", epoch, b)?;
            let loss = bce_loss(&pred, &y)?;
            let total = loss.item()?;
            check_finite(total, epoch, b, || format!("bce loss {total}"))?;
            loss.backward()?;
            opt.step()?;
            opt.zero_grads();
            train_sum += total as f64;
            n_batches += 1;
        }

        let mut val_sum = 0.0f64;
        let mut val_batches = 0usize;
        for batch in batches(val, &(0..val.len()).collect::<Vec<_>>(), cfg.batch_size) {
            let loss = no_grad(|| -> Result<f32, PipelineError> {
                let x = stack_inputs(&batch)?;
                let y = stack_labels(&batch)?;
                let pred = model.forward_mask(&x)?;
                Ok(bce_loss(&pred, &y)?.item()?)
            })?;
            val_sum += loss as f64;
            val_batches += 1;
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: train_sum / n_batches as f64,
            val_loss: if val_batches > 0 {
                val_sum / val_batches as f64
            } else {
                f64::NAN
            },
        });
    }
    Ok(RunRecord {
        epochs,
        wall_clock_s: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
        checkpoints: Vec::new(),
    })
}

/// Concatenated model outputs and labels over a sample set, in set order.
pub fn collect_outputs(
    model: &Model,
    samples: &[Sample],
    batch_size: usize,
) -> Result<(Tensor, Tensor), PipelineError> {
    if samples.is_empty() {
        return Err(PipelineError::EmptySet("evaluation"));
    }
    let mut outputs = Vec::new();
    let mut labels = Vec::new();
    let order: Vec<usize> = (0..samples.len()).collect();
    for batch in batches(samples, &order, batch_size) {
        no_grad(|| -> Result<(), PipelineError> {
            let x = stack_inputs(&batch)?;
            let y = stack_labels(&batch)?;
            let out = model.forward_mask(&x)?;
            outputs.extend_from_slice(&out.data());
            labels.extend_from_slice(&y.data());
            Ok(())
        })?;
    }
    let n = outputs.len();
    Ok((
        Tensor::from_vec(&[n], outputs)?,
        Tensor::from_vec(&[n], labels)?,
    ))
}

/// Sweep tables for the models under test. The unsupervised mask model is
/// swept directly; the supervised baseline's outputs are linearly rescaled
/// onto [0, 1] over the whole evaluation set first (its raw outputs
/// saturate well below 1).
pub struct EvalReport {
    pub jekyll: Option<SweepTable>,
    pub utterson: Option<SweepTable>,
}

pub fn evaluate(
    jekyll: Option<&Model>,
    utterson: Option<&Model>,
    test: &[Sample],
    thresholds: &[f64],
    batch_size: usize,
) -> Result<EvalReport, PipelineError> {
    if test.is_empty() {
        return Err(PipelineError::EmptySet("test"));
    }
    let jekyll_table = match jekyll {
        Some(m) => {
            let (out, lab) = collect_outputs(m, test, batch_size)?;
            Some(sweep(&out, &lab, thresholds)?)
        }
        None => None,
    };
    let utterson_table = match utterson {
        Some(m) => {
            let (out, lab) = collect_outputs(m, test, batch_size)?;
            let rescaled = rescale_unit(&out)?;
            Some(sweep(&rescaled, &lab, thresholds)?)
        }
        None => None,
    };
    Ok(EvalReport {
        jekyll: jekyll_table,
        utterson: utterson_table,
    })
}

/// Forwards one sample through all three models and renders the panel grid.
pub fn render_sample(
    jekyll: &Model,
    hyde: &Model,
    utterson: &Model,
    sample: &Sample,
) -> Result<RenderedPanels, PipelineError> {
    no_grad(|| {
        let x = stack_inputs(&[sample])?;
        let mask = jekyll.forward_mask(&x)?;
        let background = hyde.forward_background(&x)?;
        let supervised = utterson.forward_mask(&x)?;
        let labels = stack_labels(&[sample])?;
        Ok(render_panels(&x, &mask, &background, &supervised, &labels)?)
    })
}

/// FNV-1a over the raw parameter bytes; used to assert that evaluation
/// passes never mutate parameters.
pub fn parameter_fingerprint(model: &Model) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for p in model.parameters() {
        for v in p.data().iter() {
            for byte in v.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        }
    }
    hash
}
