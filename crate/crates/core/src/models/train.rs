use rand::seq::SliceRandom;

use super::network::{Mode, TrainedModel};
use super::spec::Family;
use super::{argmax, ModelError};
use crate::exec::Execution;
use crate::numfmt::sig9;
use crate::tensor::{Optimizer, OptimizerKind, Tape};
use crate::{seeds, Dataset, Frame, NUM_CLASSES};

/// Frames per tape. Each minibatch is cut into chunks of this size whose
/// gradients are reduced in chunk order, so results do not depend on how many
/// threads ran the chunks.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Fraction of the training data held out for best-epoch selection, in (0, 1).
    pub validation_fraction: f64,
    /// Rescales the summed gradient to at most this Euclidean norm.
    pub grad_clip: Option<f32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            optimizer: OptimizerKind::Adam { lr: 1e-3 },
            seed: 0,
            validation_fraction: 0.1,
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    /// Victim training schedule. The LSTM needs a larger step to converge in
    /// the same number of epochs.
    pub fn victim_default(family: Family) -> Self {
        let lr = match family {
            Family::Lstm => 3e-3,
            Family::Cnn | Family::Mlp => 1e-3,
        };
        Self {
            epochs: 15,
            optimizer: OptimizerKind::Adam { lr },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(ModelError::Config(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        let lr = self.optimizer.learning_rate();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(ModelError::Config(format!("learning rate must be positive, got {lr}")));
        }
        if let OptimizerKind::Sgd { momentum, .. } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(ModelError::Config(format!("momentum must be in [0, 1), got {momentum}")));
            }
        }
        if matches!(self.grad_clip, Some(c) if !(c.is_finite() && c > 0.0)) {
            return Err(ModelError::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch training record. Validation fields are `None` when no validation
/// set was supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the training-mode forward passes (dropout active).
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_accuracy,val_loss,val_accuracy";

    pub fn history_csv(history: &[EpochStats]) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        let opt = |v: Option<f64>| v.map(sig9).unwrap_or_default();
        for h in history {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                h.epoch,
                sig9(h.train_loss),
                sig9(h.train_accuracy),
                opt(h.val_loss),
                opt(h.val_accuracy)
            ));
        }
        out
    }
}

/// Trains on a stratified split of `dataset`, holding out
/// `config.validation_fraction` for best-epoch selection.
pub fn train(model: TrainedModel, dataset: &Dataset, config: &TrainConfig) -> Result<TrainedModel, ModelError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let (train_set, val_set) = dataset.split(config.validation_fraction, config.seed)?;
    let val = (!val_set.is_empty()).then_some(&val_set);
    train_split(model, &train_set, val, config)
}

/// Trains on `train_set`; returns the parameters from the epoch with the best
/// validation accuracy (earliest on ties), or the last epoch without validation data.
pub fn train_split(
    model: TrainedModel,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainedModel, ModelError> {
    train_split_with(model, train_set, val_set, config, Execution::default())
}

struct ChunkOut {
    loss_sum: f64,
    correct: usize,
    grads: Vec<f32>,
}

pub fn train_split_with(
    mut model: TrainedModel,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainedModel, ModelError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let n = train_set.len();
    let mut optimizer = Optimizer::new(config.optimizer, &model.params);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, crate::tensor::ParamStore)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seeds::rng(config.seed, &[0xE90C, epoch as u64]));
        let mut loss_total = 0.0f64;
        let mut correct_total = 0usize;

        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
            let scale = 1.0 / batch.len() as f32;
            let model_ref = &model;
            let outs = exec.map_slice(&chunks, |ci, chunk| -> Result<ChunkOut, ModelError> {
                let frames: Vec<&Frame> = chunk.iter().map(|&i| &train_set.frames[i].frame).collect();
                let labels: Vec<usize> = chunk.iter().map(|&i| train_set.frames[i].label.index()).collect();
                let mut rng = seeds::rng(
                    config.seed,
                    &[0xD80F, epoch as u64, bi as u64, ci as u64],
                );
                let mut tape = Tape::new();
                let params = model_ref.params.record(&mut tape, true);
                let x = tape.leaf(TrainedModel::input_tensor(&frames), false);
                let z = model_ref.forward(&mut tape, x, &params, Mode::Train(&mut rng))?;
                let correct = tape
                    .value(z)
                    .data()
                    .chunks(NUM_CLASSES)
                    .zip(&labels)
                    .filter(|(row, &y)| argmax(row) == y)
                    .count();
                let loss = tape.cross_entropy(z, &labels)?;
                let lv = tape.value(loss).data()[0];
                if !lv.is_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch, batch: bi });
                }
                let grads = tape.backward(loss)?;
                let w = chunk.len() as f32 * scale;
                Ok(ChunkOut {
                    loss_sum: lv as f64 * chunk.len() as f64,
                    correct,
                    grads: model_ref.params.flatten_grads(&params, &grads, w),
                })
            });
            model.params.zero_grad();
            for out in outs {
                let out = out?;
                loss_total += out.loss_sum;
                correct_total += out.correct;
                model.params.accumulate_flat(&out.grads);
            }
            let norm = model.params.grad_norm();
            if !norm.is_finite() {
                return Err(ModelError::NonFiniteGradient { epoch, batch: bi });
            }
            if let Some(clip) = config.grad_clip {
                if norm > clip as f64 {
                    model.params.scale_grads((clip as f64 / norm) as f32);
                }
            }
            optimizer.step(&mut model.params)?;
        }

        let (val_loss, val_accuracy) = match val_set {
            Some(v) if !v.is_empty() => {
                let (l, a) = loss_and_accuracy(&model, v, exec)?;
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        let stats = EpochStats {
            epoch,
            train_loss: loss_total / n as f64,
            train_accuracy: correct_total as f64 / n as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "{} epoch {}: train loss {:.4} acc {:.4}, val acc {}",
            model.spec.family(),
            epoch,
            stats.train_loss,
            stats.train_accuracy,
            val_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into())
        );
        if let Some(acc) = val_accuracy {
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, model.params.clone()));
            }
        }
        history.push(stats);
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    model.history = history;
    Ok(model)
}

/// Mean cross-entropy and accuracy in evaluation mode.
pub(crate) fn loss_and_accuracy(
    model: &TrainedModel,
    dataset: &Dataset,
    exec: Execution,
) -> Result<(f64, f64), ModelError> {
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let chunks: Vec<&[usize]> = idx.chunks(64).collect();
    let outs = exec.map_slice(&chunks, |_, chunk| -> Result<(f64, usize), ModelError> {
        let frames: Vec<&Frame> = chunk.iter().map(|&i| &dataset.frames[i].frame).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| dataset.frames[i].label.index()).collect();
        let mut tape = Tape::new();
        let params = model.params.record(&mut tape, false);
        let x = tape.leaf(TrainedModel::input_tensor(&frames), false);
        let z = model.forward(&mut tape, x, &params, Mode::Eval)?;
        let correct = tape
            .value(z)
            .data()
            .chunks(NUM_CLASSES)
            .zip(&labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
        let loss = tape.cross_entropy(z, &labels)?;
        Ok((tape.value(loss).data()[0] as f64 * chunk.len() as f64, correct))
    });
    let (mut loss, mut correct) = (0.0, 0);
    for o in outs {
        let (l, c) = o?;
        loss += l;
        correct += c;
    }
    let n = dataset.len() as f64;
    Ok((loss / n, correct as f64 / n))
}
