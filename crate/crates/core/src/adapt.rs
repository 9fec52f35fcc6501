//! Source-free semi-supervised adaptation with a teacher-student pair.
//!
//! The pre-trained source network is cloned into a student (trained) and a
//! teacher (never backpropagated). Each step samples a target batch, feeds it
//! to both models, and updates the student on
//!
//! ```text
//! L_total = L_cons + lambda * L_ce
//! ```
//!
//! where `L_cons` is the soft cross-entropy between the teacher's (detached,
//! eval-mode, optionally temperature-softened) class probabilities and the
//! student's predictions over the whole batch, and `L_ce` is the hard
//! cross-entropy over the batch's annotated rows only. After every optimizer
//! step the teacher tracks the student by exponential moving average. The
//! adapted model handed back is the **teacher**.
//!
//! Nothing in this module can reach source samples: its inputs are the
//! source network's weights, the target dataset, and a config. That is the
//! whole source-free contract, enforced by the signature.

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy_hard, cross_entropy_hard_with_grad, cross_entropy_soft,
    cross_entropy_soft_with_grad, softmax, LossReport, Mode, Network,
};
use crate::optim::{ema_update, AdamConfig, AdamState, EmaConfig};
use crate::rng::{batch_rng, stream_rng, Stream};
use crate::tensor::Tensor;
use crate::train::{evaluate, restore, snapshot, EvalReport, ParamSnapshot};
use rand::seq::SliceRandom;

/// Every adaptation-time knob.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    /// EMA decay of the teacher toward the student, in [0, 1).
    pub alpha: f64,
    /// Weight of the supervised term in the total loss.
    pub lambda: f64,
    /// Annotation percentage the target mask was built with, in [0, 100].
    /// Consumed here only to size the labeled validation subset for early
    /// stopping; the mask itself travels inside the dataset.
    pub p: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` mixes labeled and unlabeled rows at their natural rate;
    /// `Some(r)` reserves a fixed share `r` of each batch for labeled rows
    /// (at least one whenever any exist).
    pub labeled_fraction_per_batch: Option<f64>,
    /// Teacher softmax temperature; 1.0 leaves probabilities untouched.
    pub temperature: f64,
    pub lr: f64,
    /// Stop on stagnating labeled-validation accuracy. Requires `p >= 10`:
    /// below that the labeled subset is too thin to be a signal, and at
    /// p = 0 it does not exist at all.
    pub early_stop: bool,
    /// Epochs without improvement tolerated when `early_stop` is on.
    pub patience: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            lambda: 1.0,
            p: 100.0,
            epochs: 50,
            batch_size: 1000,
            labeled_fraction_per_batch: None,
            temperature: 1.0,
            lr: 1e-4,
            early_stop: false,
            patience: 10,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        EmaConfig::new(self.alpha)?;
        AdamConfig::with_lr(self.lr).validate()?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if !(0.0..=100.0).contains(&self.p) {
            return Err(Error::InvalidConfig(format!(
                "annotation percentage must lie in [0, 100], got {}",
                self.p
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "adaptation needs epochs and batch_size >= 1; got {}/{}",
                self.epochs, self.batch_size
            )));
        }
        if let Some(r) = self.labeled_fraction_per_batch {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!(
                    "labeled_fraction_per_batch must lie in [0, 1], got {r}"
                )));
            }
        }
        if self.early_stop {
            if self.p < 10.0 {
                return Err(Error::InvalidConfig(format!(
                    "early stopping needs p >= 10 (got p = {}); below that there is \
                     no usable labeled validation signal",
                    self.p
                )));
            }
            if self.patience == 0 {
                return Err(Error::InvalidConfig(
                    "early stopping needs patience >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One epoch of the adaptation log. Loss components are means over the
/// epoch's batches; the counts are totals.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptEpochStats {
    pub epoch: usize,
    pub loss: LossReport,
    /// Teacher accuracy on the labeled validation subset; present only when
    /// early stopping is on.
    pub val_accuracy: Option<f64>,
}

/// Everything a grid cell reports about one adaptation run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptReport {
    pub epochs: Vec<AdaptEpochStats>,
    /// The unadapted source network on the target test split.
    pub baseline: EvalReport,
    /// The returned teacher on the same split.
    pub adapted: EvalReport,
    /// Final student accuracy, logged for diagnostics only.
    pub student_accuracy: f64,
    /// `adapted.accuracy - baseline.accuracy`.
    pub delta: f64,
    /// Epoch whose teacher was returned when early stopping engaged.
    pub best_epoch: Option<usize>,
}

/// Loss bookkeeping for one batch: values only, no gradients.
pub fn total_loss(
    teacher_probs: &Tensor,
    student_logits: &Tensor,
    labels: &[usize],
    mask: &[bool],
    lambda: f64,
) -> Result<LossReport> {
    let l_cons = cross_entropy_soft(teacher_probs, student_logits)?;
    let l_ce = cross_entropy_hard(student_logits, labels, mask)?;
    Ok(LossReport {
        l_cons,
        l_ce,
        l_total: l_cons + lambda * l_ce,
        n_labeled: mask.iter().filter(|&&m| m).count(),
        n_total: student_logits.rows(),
    })
}

/// As [`total_loss`], plus the gradient of the total loss with respect to
/// the student logits. With `lambda == 0` the supervised gradient is never
/// added, so labels cannot influence the student even through rounding.
fn total_loss_with_grad(
    teacher_probs: &Tensor,
    student_logits: &Tensor,
    labels: &[usize],
    mask: &[bool],
    lambda: f64,
) -> Result<(LossReport, Tensor)> {
    let (l_cons, mut grad) = cross_entropy_soft_with_grad(teacher_probs, student_logits)?;
    let (l_ce, grad_ce) = cross_entropy_hard_with_grad(student_logits, labels, mask)?;
    if lambda != 0.0 {
        grad.add_scaled(&grad_ce, lambda)?;
    }
    Ok((
        LossReport {
            l_cons,
            l_ce,
            l_total: l_cons + lambda * l_ce,
            n_labeled: mask.iter().filter(|&&m| m).count(),
            n_total: student_logits.rows(),
        },
        grad,
    ))
}

/// Teacher class probabilities, temperature-softened when `temperature != 1`.
fn teacher_probs(teacher: &Network, x: &Tensor, temperature: f64) -> Result<Tensor> {
    let logits = teacher.forward_eval(x)?;
    if temperature == 1.0 {
        softmax(&logits)
    } else {
        softmax(&logits.map(|v| v / temperature))
    }
}

/// Draws one training batch, deterministic in `(seed, epoch, step)`.
///
/// Natural mixing (`labeled_fraction_per_batch: None`) samples uniformly
/// without replacement from the union of both pools. Fixed-ratio mode
/// reserves `round(r * batch_size)` slots for labeled rows — at least one
/// when any labeled row exists — and fills the rest from the unlabeled pool.
pub fn compose_batch(
    labeled: &[usize],
    unlabeled: &[usize],
    cfg: &AdaptConfig,
    epoch: usize,
    step: usize,
) -> Result<Vec<usize>> {
    let total = labeled.len() + unlabeled.len();
    if total == 0 {
        return Err(Error::EmptySelection {
            context: "batch composition with two empty pools".into(),
        });
    }
    let mut rng = batch_rng(cfg.seed, epoch, step);
    match cfg.labeled_fraction_per_batch {
        None => {
            let k = cfg.batch_size.min(total);
            Ok(rand::seq::index::sample(&mut rng, total, k)
                .iter()
                .map(|i| {
                    if i < labeled.len() {
                        labeled[i]
                    } else {
                        unlabeled[i - labeled.len()]
                    }
                })
                .collect())
        }
        Some(r) => {
            let mut want = (r * cfg.batch_size as f64).round() as usize;
            if !labeled.is_empty() {
                want = want.max(1);
            }
            let n_lab = want.min(labeled.len()).min(cfg.batch_size);
            let n_unlab = (cfg.batch_size - n_lab).min(unlabeled.len());
            let mut batch: Vec<usize> =
                rand::seq::index::sample(&mut rng, labeled.len().max(1), n_lab)
                    .iter()
                    .map(|i| labeled[i])
                    .collect();
            batch.extend(
                rand::seq::index::sample(&mut rng, unlabeled.len().max(1), n_unlab)
                    .iter()
                    .map(|i| unlabeled[i]),
            );
            Ok(batch)
        }
    }
}

/// The labeled slice of the validation split used as the early-stop signal:
/// `round(p% of val)` rows drawn from a dedicated stream, fixed for the run.
fn early_stop_subset(ds: &Dataset, cfg: &AdaptConfig) -> Result<Vec<usize>> {
    let mut val = ds.indices_of(Split::Val);
    if val.is_empty() {
        return Err(Error::EmptySelection {
            context: "early stopping needs a validation split".into(),
        });
    }
    let k = (val.len() as f64 * cfg.p / 100.0).round() as usize;
    if k == 0 {
        return Err(Error::EmptySelection {
            context: format!(
                "early stopping at p = {} leaves no labeled validation rows",
                cfg.p
            ),
        });
    }
    val.shuffle(&mut stream_rng(cfg.seed, Stream::EarlyStopVal as u64));
    val.truncate(k);
    Ok(val)
}

fn accuracy_on(net: &Network, ds: &Dataset, indices: &[usize]) -> Result<f64> {
    let labels = ds.labels_of(indices, "labeled validation subset")?;
    let preds = crate::train::predict(net, ds, indices)?;
    let correct = preds.iter().zip(&labels).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / indices.len() as f64)
}

fn check_compatible(source: &Network, target: &Dataset) -> Result<()> {
    if source.input_features() != target.feature_count() {
        return Err(Error::ShapeMismatch {
            op: "adaptation".into(),
            expected: format!("{} input features", source.input_features()),
            actual: format!("{} dataset features", target.feature_count()),
        });
    }
    if target.classes != 0 && target.classes != source.output_width() {
        return Err(Error::ShapeMismatch {
            op: "adaptation".into(),
            expected: format!("{} classes", source.output_width()),
            actual: format!("{}", target.classes),
        });
    }
    Ok(())
}

/// Adapts `source` to the target location and returns the teacher network
/// (in eval mode) together with the run report.
///
/// The target's training split must already carry an annotation mask (see
/// [`crate::data::annotate_fraction`]); rows whose labels the mask stripped
/// participate only in the consistency term. The val and test splits keep
/// their labels for early stopping and reporting respectively.
pub fn adapt_target(
    source: &Network,
    target: &Dataset,
    cfg: &AdaptConfig,
) -> Result<(Network, AdaptReport)> {
    cfg.validate()?;
    if !target.annotated {
        return Err(Error::MaskMissing);
    }
    check_compatible(source, target)?;
    let train = target.indices_of(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptySelection {
            context: "adaptation training split".into(),
        });
    }
    let (labeled, unlabeled): (Vec<usize>, Vec<usize>) = train
        .iter()
        .partition(|&&i| target.samples[i].label.is_some());

    let baseline = evaluate(source, target, Split::Test)?;

    let mut student = source.clone();
    let mut teacher = source.clone();
    student.set_mode(Mode::Train);
    teacher.set_mode(Mode::Eval);
    let mut adam = AdamState::new(&student, AdamConfig::with_lr(cfg.lr))?;
    let ema = EmaConfig::new(cfg.alpha)?;

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size).max(1);
    let val_subset = if cfg.early_stop {
        Some(early_stop_subset(target, cfg)?)
    } else {
        None
    };

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<ParamSnapshot> = None;
    let mut best_epoch = None;
    let mut best_val = f64::NEG_INFINITY;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let mut cons_sum = 0.0;
        let mut ce_sum = 0.0;
        let mut n_labeled = 0;
        let mut n_total = 0;
        for step in 0..steps_per_epoch {
            let batch = compose_batch(&labeled, &unlabeled, cfg, epoch, step)?;
            let x = target.features_tensor(&batch);
            let labels: Vec<usize> = batch
                .iter()
                .map(|&i| target.samples[i].label.unwrap_or(0))
                .collect();
            let mask: Vec<bool> = batch
                .iter()
                .map(|&i| target.samples[i].label.is_some())
                .collect();

            let soft = teacher_probs(&teacher, &x, cfg.temperature)?;
            let student_logits = student.forward(&x)?;
            let (report, grad) =
                total_loss_with_grad(&soft, &student_logits, &labels, &mask, cfg.lambda)?;
            let grads = student.backward(&grad)?;
            adam.step(&mut student, &grads)?;
            ema_update(&mut teacher, &student, ema)?;

            cons_sum += report.l_cons;
            ce_sum += report.l_ce;
            n_labeled += report.n_labeled;
            n_total += report.n_total;
        }

        let l_cons = cons_sum / steps_per_epoch as f64;
        let l_ce = ce_sum / steps_per_epoch as f64;
        let val_accuracy = match &val_subset {
            Some(subset) => Some(accuracy_on(&teacher, target, subset)?),
            None => None,
        };
        epochs.push(AdaptEpochStats {
            epoch,
            loss: LossReport {
                l_cons,
                l_ce,
                l_total: l_cons + cfg.lambda * l_ce,
                n_labeled,
                n_total,
            },
            val_accuracy,
        });

        if let Some(acc) = val_accuracy {
            if acc > best_val {
                best_val = acc;
                best_epoch = Some(epoch);
                best = Some(snapshot(&teacher));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }

    if let Some(saved) = &best {
        restore(&mut teacher, saved);
    }
    teacher.set_mode(Mode::Eval);
    student.set_mode(Mode::Eval);

    let adapted = evaluate(&teacher, target, Split::Test)?;
    let student_accuracy = evaluate(&student, target, Split::Test)?.accuracy;
    let delta = adapted.accuracy - baseline.accuracy;
    let report = AdaptReport {
        epochs,
        baseline,
        adapted,
        student_accuracy,
        delta,
        best_epoch,
    };
    Ok((teacher, report))
}
