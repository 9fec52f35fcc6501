//! Classification losses and their gradients.
//!
//! Two cross-entropy variants drive everything: a hard-label form used for
//! supervised training (with an optional per-row mask so partially labeled
//! batches contribute only their labeled rows), and a soft-target form used
//! for the teacher-student consistency term. Both are computed through
//! log-sum-exp with max subtraction so saturated logits stay finite, and both
//! report the mean over the rows they actually use.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of a `[B, C]` logit matrix.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    check_logits(logits, "softmax")?;
    let (b, c) = (logits.rows(), logits.cols());
    let mut out = vec![0.0; b * c];
    for r in 0..b {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out[r * c + j] = e;
            sum += e;
        }
        for j in 0..c {
            out[r * c + j] /= sum;
        }
    }
    Tensor::new(vec![b, c], out)
}

/// Row-wise log-softmax, numerically stable for extreme logits.
pub fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    check_logits(logits, "log_softmax")?;
    let (b, c) = (logits.rows(), logits.cols());
    let mut out = vec![0.0; b * c];
    for r in 0..b {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        for j in 0..c {
            out[r * c + j] = row[j] - lse;
        }
    }
    Tensor::new(vec![b, c], out)
}

/// Mean negative log-likelihood of `labels` under `logits`, over masked rows.
///
/// Rows where `mask` is false contribute nothing. When no row is masked in,
/// the loss is exactly `0.0` — this is what makes fully unlabeled batches
/// well defined during adaptation.
pub fn cross_entropy_hard(logits: &Tensor, labels: &[usize], mask: &[bool]) -> Result<f64> {
    Ok(cross_entropy_hard_with_grad(logits, labels, mask)?.0)
}

/// [`cross_entropy_hard`] plus its gradient with respect to the logits.
///
/// The gradient of a masked-in row is `(softmax(row) - onehot(label)) / m`
/// where `m` is the number of masked-in rows; masked-out rows get zeros.
pub fn cross_entropy_hard_with_grad(
    logits: &Tensor,
    labels: &[usize],
    mask: &[bool],
) -> Result<(f64, Tensor)> {
    check_logits(logits, "cross_entropy_hard")?;
    let (b, c) = (logits.rows(), logits.cols());
    if labels.len() != b || mask.len() != b {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy_hard".into(),
            expected: format!("{b} labels and mask entries"),
            actual: format!("{} labels, {} mask entries", labels.len(), mask.len()),
        });
    }
    for (&label, &m) in labels.iter().zip(mask) {
        if m && label >= c {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
    }
    let m = mask.iter().filter(|&&v| v).count();
    let mut grad = Tensor::zeros(vec![b, c]);
    if m == 0 {
        return Ok((0.0, grad));
    }
    let log_p = log_softmax(logits)?;
    let mut loss = 0.0;
    let g = grad.data_mut();
    for r in 0..b {
        if !mask[r] {
            continue;
        }
        loss -= log_p.data()[r * c + labels[r]];
        for j in 0..c {
            let p = log_p.data()[r * c + j].exp();
            g[r * c + j] = (p - if j == labels[r] { 1.0 } else { 0.0 }) / m as f64;
        }
    }
    Ok((loss / m as f64, grad))
}

/// Mean soft-target cross-entropy `-sum_c t_c * log_softmax(z)_c` over rows.
///
/// `teacher` must hold one probability distribution per row; rows that do not
/// sum to 1 (within 1e-9) or contain negative mass are rejected.
pub fn cross_entropy_soft(teacher: &Tensor, student_logits: &Tensor) -> Result<f64> {
    Ok(cross_entropy_soft_with_grad(teacher, student_logits)?.0)
}

/// [`cross_entropy_soft`] plus its gradient with respect to the student logits.
///
/// Per row, `d loss / d z = (softmax(z) * sum(t) - t) / B`; with normalized
/// teacher rows this is the familiar `(p - t) / B`.
pub fn cross_entropy_soft_with_grad(
    teacher: &Tensor,
    student_logits: &Tensor,
) -> Result<(f64, Tensor)> {
    check_logits(student_logits, "cross_entropy_soft")?;
    let (b, c) = (student_logits.rows(), student_logits.cols());
    if teacher.shape() != student_logits.shape() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy_soft".into(),
            expected: format!("teacher shape [{b}, {c}]"),
            actual: format!("{:?}", teacher.shape()),
        });
    }
    for r in 0..b {
        let row = teacher.row(r);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&t| t < -1e-12) {
            return Err(Error::NotADistribution { row: r, sum });
        }
    }
    let log_p = log_softmax(student_logits)?;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(vec![b, c]);
    let g = grad.data_mut();
    for r in 0..b {
        let t_row = teacher.row(r);
        let t_sum: f64 = t_row.iter().sum();
        for j in 0..c {
            let lp = log_p.data()[r * c + j];
            loss -= t_row[j] * lp;
            g[r * c + j] = (lp.exp() * t_sum - t_row[j]) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

/// Shannon entropy of one probability row, in nats. Zero entries contribute 0.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

/// Per-step loss breakdown logged during adaptation.
///
/// Invariants: `l_total == l_cons + lambda * l_ce` by construction, and
/// `n_labeled <= n_total`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_cons: f64,
    pub l_ce: f64,
    pub l_total: f64,
    pub n_labeled: usize,
    pub n_total: usize,
}

fn check_logits(logits: &Tensor, op: &str) -> Result<()> {
    if logits.ndim() != 2 || logits.cols() == 0 || logits.rows() == 0 {
        return Err(Error::ShapeMismatch {
            op: op.into(),
            expected: "non-empty [B, C] matrix".into(),
            actual: format!("{:?}", logits.shape()),
        });
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite { context: op.into() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_5: f64 = 1.6094379124341003;

    #[test]
    fn softmax_of_uniform_logits_is_uniform() {
        let logits = Tensor::from_rows(&[vec![0.0; 5]]).unwrap();
        let p = softmax(&logits).unwrap();
        for &v in p.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_saturates_cleanly_at_extreme_logits() {
        let logits = Tensor::from_rows(&[vec![1000.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
        let p = softmax(&logits).unwrap();
        assert!((p.data()[0] - 1.0).abs() < 1e-12);
        for &v in &p.data()[1..] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_non_finite_logits() {
        let logits = Tensor::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(softmax(&logits).is_err());
    }

    #[test]
    fn hard_loss_on_uniform_logits_is_ln_of_class_count() {
        let logits = Tensor::from_rows(&[vec![0.0; 5]]).unwrap();
        let loss = cross_entropy_hard(&logits, &[2], &[true]).unwrap();
        assert!((loss - LN_5).abs() < 1e-9);
    }

    #[test]
    fn hard_loss_matches_closed_form_on_peaked_logits() {
        // -log p_0 for logits [2,0,0,0,0] is ln(1 + 4 e^-2).
        let logits = Tensor::from_rows(&[vec![2.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
        let loss = cross_entropy_hard(&logits, &[0], &[true]).unwrap();
        let expected = (1.0 + 4.0 * (-2.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn hard_loss_with_empty_mask_is_exactly_zero() {
        let logits = Tensor::from_rows(&[vec![1.0, -1.0], vec![0.5, 0.0]]).unwrap();
        let (loss, grad) = cross_entropy_hard_with_grad(&logits, &[0, 1], &[false, false]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hard_loss_rejects_out_of_range_label() {
        let logits = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            cross_entropy_hard(&logits, &[2], &[true]),
            Err(Error::LabelOutOfRange {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn hard_gradient_averages_only_masked_rows() {
        let logits = Tensor::from_rows(&[vec![0.0, 0.0], vec![3.0, -3.0]]).unwrap();
        let (_, grad) = cross_entropy_hard_with_grad(&logits, &[0, 0], &[true, false]).unwrap();
        assert!((grad.data()[0] - (0.5 - 1.0)).abs() < 1e-12);
        assert!((grad.data()[1] - 0.5).abs() < 1e-12);
        assert_eq!(&grad.data()[2..], &[0.0, 0.0]);
    }

    #[test]
    fn soft_loss_of_any_teacher_against_uniform_student_is_ln_5() {
        let teacher = Tensor::from_rows(&[vec![0.7, 0.3, 0.0, 0.0, 0.0]]).unwrap();
        let logits = Tensor::from_rows(&[vec![0.0; 5]]).unwrap();
        let loss = cross_entropy_soft(&teacher, &logits).unwrap();
        assert!((loss - LN_5).abs() < 1e-9);
    }

    #[test]
    fn soft_loss_vanishes_when_student_is_certain_and_correct() {
        let teacher = Tensor::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        let logits = Tensor::from_rows(&[vec![0.0, 1000.0, 0.0]]).unwrap();
        let loss = cross_entropy_soft(&teacher, &logits).unwrap();
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn soft_loss_rejects_unnormalized_teacher_rows() {
        let teacher = Tensor::from_rows(&[vec![0.9, 0.3]]).unwrap();
        let logits = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            cross_entropy_soft(&teacher, &logits),
            Err(Error::NotADistribution { row: 0, .. })
        ));
    }

    #[test]
    fn soft_loss_rejects_negative_teacher_mass() {
        let teacher = Tensor::from_rows(&[vec![1.5, -0.5]]).unwrap();
        let logits = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(cross_entropy_soft(&teacher, &logits).is_err());
    }

    #[test]
    fn soft_loss_against_matching_student_equals_entropy() {
        let p = [0.5, 0.25, 0.125, 0.0625, 0.0625];
        let teacher = Tensor::from_rows(&[p.to_vec()]).unwrap();
        let logits = Tensor::from_rows(&[p.iter().map(|v| v.ln()).collect::<Vec<_>>()]).unwrap();
        let loss = cross_entropy_soft(&teacher, &logits).unwrap();
        assert!((loss - entropy(&p)).abs() < 1e-9);
    }

    #[test]
    fn loss_report_totals_are_consistent() {
        let r = LossReport {
            l_cons: 0.25,
            l_ce: 0.5,
            l_total: 0.25 + 2.0 * 0.5,
            n_labeled: 3,
            n_total: 10,
        };
        assert_eq!(r.l_total, r.l_cons + 2.0 * r.l_ce);
        assert!(r.n_labeled <= r.n_total);
    }
}
