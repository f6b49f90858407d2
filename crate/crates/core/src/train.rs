//! Teacher-forced multitask training with per-epoch checkpoint selection.

use std::path::PathBuf;

use aacap_autodiff::ParamStore;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::model::{Captioner, LossBreakdown, TrainExample};
use crate::objectives::ContrastiveConfig;
use crate::optim::{adamw_step, clip_grad_norm, AdamWConfig, AdamWState};
use crate::rng;
use crate::text_embed::TextEmbedder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[default]
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn default_lr(self) -> f64 {
        match self {
            Stage::Pretrain => 2e-4,
            Stage::Finetune => 2e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    /// Defaults to the stage's learning rate when unset.
    pub lr: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub contrastive: ContrastiveConfig,
    pub optimizer: AdamWConfig,
    pub grad_clip: f64,
    pub seed: u64,
    pub max_vocab: usize,
    /// Where a diagnostic checkpoint goes if the loss turns non-finite.
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Pretrain,
            lr: None,
            batch_size: 32,
            epochs: 10,
            max_steps: None,
            contrastive: ContrastiveConfig::default(),
            optimizer: AdamWConfig::default(),
            grad_clip: 1.0,
            seed: 0,
            max_vocab: 1000,
            snapshot_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.stage.default_lr())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr() > 0.0 && self.lr().is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        self.contrastive.validate()
    }
}

/// One example per (clip, caption) pair, with features and text embeddings
/// computed once.
pub fn prepare_examples(model: &Captioner, split: &DatasetSplit, embedder: &dyn TextEmbedder) -> Result<Vec<TrainExample>> {
    use rayon::prelude::*;
    let per_pair: Vec<Vec<TrainExample>> = split
        .pairs()
        .par_iter()
        .map(|pair| {
            let features = model.features(pair.waveform())?.into_frames();
            pair.captions()
                .iter()
                .map(|c| {
                    Ok(TrainExample {
                        features: features.clone(),
                        tokens: model.tokenizer.tokenize(c),
                        text_embedding: embedder.embed(c.as_str())?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_pair.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub val_accuracy: f64,
    /// Per-token validation NLL; breaks accuracy ties.
    pub val_nll: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub optimizer: AdamWState,
}

fn accuracy(model: &Captioner, examples: &[TrainExample]) -> Result<f64> {
    let (correct, total) = model.next_token_accuracy(examples)?;
    Ok(correct as f64 / total.max(1) as f64)
}

fn per_token_nll(model: &Captioner, examples: &[TrainExample], config: &TrainConfig) -> Result<f64> {
    let (mut sum, mut tokens) = (0.0, 0);
    for chunk in examples.chunks(config.batch_size) {
        let l = model.batch_loss(chunk, &config.contrastive)?;
        sum += l.nll_sum;
        tokens += l.target_tokens;
    }
    Ok(sum / tokens.max(1) as f64)
}

fn write_snapshot(model: &Captioner, config: &TrainConfig, state: &AdamWState, step: usize) -> Result<PathBuf> {
    let dir = config
        .snapshot_dir
        .clone()
        .unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("nonfinite-step{step}.ckpt"));
    Checkpoint::new(model.clone(), config.clone(), Some(state.clone()), step as u64, None).save(&path)?;
    Ok(path)
}

/// Trains `model` in place. After every epoch the teacher-forced accuracy on
/// `validation` decides whether the parameters are kept as the best so far,
/// with ties going to the lower validation NLL; on return the model holds
/// the best parameters. With no validation examples the last epoch is kept.
pub fn train(
    model: &mut Captioner,
    train_set: &[TrainExample],
    validation: &[TrainExample],
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let lr = config.lr();
    let mut state = AdamWState::new(&model.params);
    let mut best: Option<(usize, f64, f64, ParamStore)> = None;
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut step = 0;
    'epochs: for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, "batch-order", epoch as u64));
        let epoch_start = step;
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let batch: Vec<TrainExample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, mut grads) = model.loss_and_grads(&batch, &config.contrastive)?;
            step += 1;
            if !loss.total.is_finite() {
                let snapshot = write_snapshot(model, config, &state, step)?;
                return Err(Error::NonFiniteLoss { step, snapshot });
            }
            let grad_norm = clip_grad_norm(&mut grads, config.grad_clip);
            adamw_step(&mut model.params, &mut state, &grads, lr, &config.optimizer);
            let log = StepLog {
                step,
                epoch,
                loss,
                grad_norm,
            };
            on_step(&log);
            steps.push(log);
        }
        if step == epoch_start {
            break 'epochs;
        }
        let (val_accuracy, val_nll) = if validation.is_empty() {
            (0.0, 0.0)
        } else {
            (accuracy(model, validation)?, per_token_nll(model, validation, config)?)
        };
        log::debug!("epoch {epoch}: validation accuracy {val_accuracy:.4}, nll {val_nll:.4}");
        epochs.push(EpochLog {
            epoch,
            steps: step,
            val_accuracy,
            val_nll,
        });
        let improved = match &best {
            None => true,
            Some((_, acc, nll, _)) => {
                validation.is_empty() || val_accuracy > *acc || (val_accuracy == *acc && val_nll < *nll)
            }
        };
        if improved {
            best = Some((epoch, val_accuracy, val_nll, model.params.clone()));
        }
    }
    let (best_epoch, best_val_accuracy, _, params) =
        best.ok_or_else(|| Error::Config("training ran no steps".into()))?;
    model.params = params;
    Ok(TrainOutcome {
        steps,
        epochs,
        best_epoch,
        best_val_accuracy,
        optimizer: state,
    })
}
