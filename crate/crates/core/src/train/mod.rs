//! Weakly supervised training from video-level labels.

mod loss;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{forward, save_checkpoint, ModelError, ModelParams, PromptEmbedding};
use crate::numerics::{adam_step, AdamConfig, AdamState, NumericsError, Tape, Tensor, Var};
use crate::simgen::LoadedEpisode;

pub use loss::{bce_value, bce_with_logits, contrastive_loss, mil_k, mil_pool};

pub const LOSS_LOG_FILE: &str = "loss_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no training episodes")]
    EmptyDataset,
    #[error("episode has no valid steps")]
    NoValidSteps,
    #[error("contrastive loss needs at least two episodes, got {0}")]
    BatchTooSmall(usize),
    #[error("{actual} labels for {expected} episodes")]
    LabelCount { expected: usize, actual: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (bce {bce}, contrastive {contrastive})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        bce: f64,
        contrastive: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature: f64,
    pub contrastive_weight: f64,
    pub seed: u64,
    /// Epochs between intermediate checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 50,
            temperature: 0.1,
            contrastive_weight: 0.05,
            seed: 0,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(TrainError::Config("temperature must be positive".into()));
        }
        if !(self.contrastive_weight >= 0.0 && self.contrastive_weight.is_finite()) {
            return Err(TrainError::Config("contrastive_weight must be non-negative".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Episodes padded to a common length.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub features: Vec<Tensor>,
    pub masks: Vec<Vec<bool>>,
    pub labels: Vec<bool>,
}

impl Batch {
    pub fn from_episodes(episodes: &[&LoadedEpisode]) -> Result<Self, TrainError> {
        if episodes.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let steps = episodes.iter().map(|e| e.features.rows()).max().unwrap_or(0);
        if steps == 0 {
            return Err(TrainError::NoValidSteps);
        }
        let mut batch = Batch {
            ids: Vec::with_capacity(episodes.len()),
            features: Vec::with_capacity(episodes.len()),
            masks: Vec::with_capacity(episodes.len()),
            labels: Vec::with_capacity(episodes.len()),
        };
        for ep in episodes {
            let (t, d) = ep.features.shape();
            if t == 0 {
                return Err(TrainError::NoValidSteps);
            }
            batch.ids.push(ep.id.clone());
            batch
                .features
                .push(Tensor::from_fn(steps, d, |r, c| if r < t { ep.features.get(r, c) } else { 0.0 }));
            batch.masks.push((0..steps).map(|r| r < t).collect());
            batch.labels.push(ep.video_label);
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Loss nodes of one batch on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub bce: Var,
    pub contrastive: Var,
    pub total: Var,
}

/// Mean pooled BCE over the batch plus the weighted contrastive term on
/// mean-pooled aligned features.
pub fn batch_loss(
    tape: &mut Tape,
    params: &crate::model::ParamVars,
    prompt: &PromptEmbedding,
    batch: &Batch,
    temperature: f64,
    contrastive_weight: f64,
) -> Result<LossVars, TrainError> {
    let mut bce_terms = Vec::with_capacity(batch.len());
    let mut globals = Vec::with_capacity(batch.len());
    for ((features, mask), &label) in batch.features.iter().zip(&batch.masks).zip(&batch.labels) {
        let out = forward(tape, params, features, prompt, mask)?;
        let pooled = mil_pool(tape, out.logits, mask, label)?;
        bce_terms.push(bce_with_logits(tape, pooled, label));
        globals.push(tape.mean_over_valid(out.semantic.z_sem, mask)?);
    }
    let stacked = tape.concat_rows(&bce_terms)?;
    let summed = tape.sum_all(stacked);
    let bce = tape.scale(summed, 1.0 / batch.len() as f64);
    let contrastive = if batch.len() >= 2 {
        let g = tape.concat_rows(&globals)?;
        contrastive_loss(tape, g, &batch.labels, temperature)?
    } else {
        tape.leaf(Tensor::scalar(0.0))
    };
    let total = if contrastive_weight == 0.0 {
        bce
    } else {
        let weighted = tape.scale(contrastive, contrastive_weight);
        tape.add(bce, weighted)?
    };
    Ok(LossVars {
        bce,
        contrastive,
        total,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub bce: f64,
    pub contrastive: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub bce: f64,
    pub contrastive: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub batches: Vec<LossRecord>,
    pub epochs: Vec<EpochSummary>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.total)
    }
}

/// Losses and parameter gradients of one batch, in registry order.
pub fn batch_gradients(
    params: &ModelParams,
    prompt: &PromptEmbedding,
    batch: &Batch,
    temperature: f64,
    contrastive_weight: f64,
) -> Result<(LossRecord, Vec<Tensor>), TrainError> {
    let mut tape = Tape::new();
    let pv = params.bind(&mut tape);
    let loss = batch_loss(&mut tape, &pv, prompt, batch, temperature, contrastive_weight)?;
    let grads = tape.backward(loss.total)?;
    let record = LossRecord {
        epoch: 0,
        batch: 0,
        bce: tape.value(loss.bce).item(),
        contrastive: tape.value(loss.contrastive).item(),
        total: tape.value(loss.total).item(),
    };
    let grads = pv.vars().iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();
    Ok((record, grads))
}

fn checkpoint_metadata(config: &TrainConfig, epochs_completed: usize) -> serde_json::Value {
    serde_json::json!({
        "train": config,
        "epochs_completed": epochs_completed,
    })
}

/// Trains `params` in place with Adam.
///
/// With `out_dir`, every batch is appended to `loss_log.jsonl`,
/// intermediate checkpoints go to `checkpoints/epoch_NNNN.ckpt` and the
/// final parameters to `model.ckpt`.
pub fn train_loop(
    params: &mut ModelParams,
    prompt: &PromptEmbedding,
    episodes: &[&LoadedEpisode],
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if episodes.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(fs::File::create(dir.join(LOSS_LOG_FILE))?)
        }
        None => None,
    };
    let adam = config.adam();
    let mut state = AdamState::new(&params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut count = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let members: Vec<&LoadedEpisode> = chunk.iter().map(|&i| episodes[i]).collect();
            let batch = Batch::from_episodes(&members)?;
            let (mut record, grads) =
                batch_gradients(params, prompt, &batch, config.temperature, config.contrastive_weight)?;
            record.epoch = epoch;
            record.batch = b;
            if !record.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    bce: record.bce,
                    contrastive: record.contrastive,
                });
            }
            adam_step(&mut params.tensors_mut(), &grads, &mut state, &adam)?;
            if let Some(f) = log.as_mut() {
                serde_json::to_writer(&mut *f, &record)?;
                f.write_all(b"\n")?;
            }
            sums.0 += record.bce;
            sums.1 += record.contrastive;
            sums.2 += record.total;
            count += 1;
            report.batches.push(record);
        }
        let n = count as f64;
        let summary = EpochSummary {
            epoch,
            bce: sums.0 / n,
            contrastive: sums.1 / n,
            total: sums.2 / n,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (bce {:.5}, contrastive {:.5})",
            summary.total,
            summary.bce,
            summary.contrastive
        );
        report.epochs.push(summary);
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && epoch < config.epochs {
                let path = dir.join("checkpoints").join(format!("epoch_{epoch:04}.ckpt"));
                save_checkpoint(&path, params, &checkpoint_metadata(config, epoch))?;
                report.checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = out_dir {
        let path = dir.join(FINAL_CHECKPOINT);
        save_checkpoint(&path, params, &checkpoint_metadata(config, config.epochs))?;
        report.checkpoints.push(path);
    }
    Ok(report)
}
