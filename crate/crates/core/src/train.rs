//! Supervised training on the source location and shared evaluation.
//!
//! Training is plain mini-batch Adam on the masked cross-entropy loss with
//! every mask bit on. Each epoch reshuffles the training split from an
//! epoch-derived stream, validation accuracy is measured after every epoch,
//! and the best-validation parameters are restored when the loop ends, either
//! at the epoch cap or after `patience` epochs without improvement.

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_hard_with_grad, Mode, Network};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::epoch_rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;

/// Batch width used for inference-only passes, where batch size only affects
/// memory, never results.
const EVAL_BATCH: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation accuracy before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 1000,
            max_epochs: 200,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(format!(
                "training needs batch_size, max_epochs, and patience >= 1; got {}/{}/{}",
                self.batch_size, self.max_epochs, self.patience
            )));
        }
        AdamConfig::with_lr(self.lr).validate()
    }
}

/// One epoch of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean over the epoch's batch losses.
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters the network ended up with.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Accuracy plus the row-true/column-predicted confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub n: usize,
}

/// Index of the row maximum; ties go to the lowest class id.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Splits shuffled indices into training batches. With `merge_lone_tail` a
/// trailing single-sample batch is folded into its predecessor, which keeps
/// batch statistics well-defined for normalization layers.
pub(crate) fn batch_chunks(
    indices: &[usize],
    batch_size: usize,
    merge_lone_tail: bool,
) -> Vec<Vec<usize>> {
    let mut chunks: Vec<Vec<usize>> = indices
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect();
    if merge_lone_tail && chunks.len() >= 2 && chunks.last().is_some_and(|c| c.len() == 1) {
        let tail = chunks.pop().expect("checked non-empty");
        chunks.last_mut().expect("checked len >= 2").extend(tail);
    }
    chunks
}

/// Runs the network over `indices` in eval mode and returns predicted classes.
pub fn predict(net: &Network, ds: &Dataset, indices: &[usize]) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let x = ds.features_tensor(chunk);
        let logits = net.forward_eval(&x)?;
        for r in 0..logits.rows() {
            preds.push(argmax(logits.row(r)));
        }
    }
    Ok(preds)
}

/// Evaluates classification quality on one split of a labeled dataset.
///
/// Precision and recall for a class with no predicted (resp. true) samples
/// are reported as zero rather than NaN.
pub fn evaluate(net: &Network, ds: &Dataset, split: Split) -> Result<EvalReport> {
    let indices = ds.indices_of(split);
    if indices.is_empty() {
        return Err(Error::EmptySelection {
            context: format!("evaluation split {split:?} has no samples"),
        });
    }
    let labels = ds.labels_of(&indices, "evaluation")?;
    let preds = predict(net, ds, &indices)?;
    let classes = net.output_width();
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in labels.iter().zip(&preds) {
        if t >= classes {
            return Err(Error::LabelOutOfRange { label: t, classes });
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let mut precision = vec![0.0; classes];
    let mut recall = vec![0.0; classes];
    for c in 0..classes {
        let predicted: usize = (0..classes).map(|t| confusion[t][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        if predicted > 0 {
            precision[c] = confusion[c][c] as f64 / predicted as f64;
        }
        if actual > 0 {
            recall[c] = confusion[c][c] as f64 / actual as f64;
        }
    }
    Ok(EvalReport {
        accuracy: correct as f64 / indices.len() as f64,
        confusion,
        precision,
        recall,
        n: indices.len(),
    })
}

/// A frozen copy of every trainable tensor and running statistic, used to
/// rewind a network to its best validation epoch.
pub(crate) struct ParamSnapshot {
    params: Vec<Vec<Tensor>>,
    running: Vec<Option<crate::nn::RunningStats>>,
}

pub(crate) fn snapshot(net: &Network) -> ParamSnapshot {
    ParamSnapshot {
        params: net.params().to_vec(),
        running: net.running().to_vec(),
    }
}

pub(crate) fn restore(net: &mut Network, saved: &ParamSnapshot) {
    for (dst, src) in net.params_mut().iter_mut().zip(&saved.params) {
        dst.clone_from(src);
    }
    for (dst, src) in net.running_mut().iter_mut().zip(&saved.running) {
        dst.clone_from(src);
    }
}

/// Trains `net` on the training split and leaves it holding the parameters
/// of its best validation epoch, in eval mode.
pub fn train_source(net: &mut Network, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let train = ds.indices_of(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptySelection {
            context: "training split has no samples".into(),
        });
    }
    ds.labels_of(&train, "source training")?;
    let val = ds.indices_of(Split::Val);
    if val.is_empty() {
        return Err(Error::EmptySelection {
            context: "validation split has no samples".into(),
        });
    }

    let mut adam = AdamState::new(net, AdamConfig::with_lr(cfg.lr))?;
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<ParamSnapshot> = None;
    let mut best_epoch = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut since_best = 0;
    let merge_tail = net.has_batchnorm();

    for epoch in 1..=cfg.max_epochs {
        let mut order = train.clone();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));

        net.set_mode(Mode::Train);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in batch_chunks(&order, cfg.batch_size, merge_tail) {
            let x = ds.features_tensor(&chunk);
            let y = ds.labels_of(&chunk, "source training")?;
            let logits = net.forward(&x)?;
            let mask = vec![true; y.len()];
            let (loss, grad) = cross_entropy_hard_with_grad(&logits, &y, &mask)?;
            let grads = net.backward(&grad)?;
            adam.step(net, &grads)?;
            loss_sum += loss;
            batches += 1;
        }

        net.set_mode(Mode::Eval);
        let val_accuracy = evaluate(net, ds, Split::Val)?.accuracy;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_accuracy,
        });

        if val_accuracy > best_val {
            best_val = val_accuracy;
            best_epoch = epoch;
            best = Some(snapshot(net));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let saved = best.expect("at least one epoch ran");
    restore(net, &saved);
    net.set_mode(Mode::Eval);
    Ok(TrainHistory {
        epochs: history,
        best_epoch,
        best_val_accuracy: best_val,
    })
}
