//! Adam optimization and exponential moving averages.
//!
//! [`AdamState`] carries first/second moment estimates per parameter tensor
//! and applies the bias-corrected update in place. [`ema_update`] blends a
//! teacher network toward a student network, which is the only way teacher
//! parameters ever change during adaptation.

use crate::error::{Error, Result};
use crate::nn::{Gradients, Network};
use crate::tensor::Tensor;

/// Adam hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Default moments with a caller-chosen learning rate.
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "adam learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!(
                    "adam {name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !self.eps.is_finite() || self.eps <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "adam eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Per-parameter moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<Vec<Tensor>>,
    v: Vec<Vec<Tensor>>,
    t: u64,
}

impl AdamState {
    /// Fresh zeroed state shaped after `net`'s parameters.
    pub fn new(net: &Network, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        let zeros = |groups: &[Vec<Tensor>]| {
            groups
                .iter()
                .map(|g| {
                    g.iter()
                        .map(|t| Tensor::zeros(t.shape().to_vec()))
                        .collect()
                })
                .collect()
        };
        Ok(Self {
            m: zeros(net.params()),
            v: zeros(net.params()),
            t: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Number of steps applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected Adam step to `net` in place.
    ///
    /// Rejects gradients whose shapes do not mirror the parameters and
    /// refuses non-finite gradients, naming the offending parameter.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.0.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "AdamState::step".into(),
                expected: format!("{} gradient groups", self.m.len()),
                actual: format!("{}", grads.0.len()),
            });
        }
        for (layer, (group, mg)) in grads.0.iter().zip(&self.m).enumerate() {
            if group.len() != mg.len() {
                return Err(Error::ShapeMismatch {
                    op: "AdamState::step".into(),
                    expected: format!("{} tensors in layer {layer}", mg.len()),
                    actual: format!("{}", group.len()),
                });
            }
            for (pi, (g, m)) in group.iter().zip(mg).enumerate() {
                if g.shape() != m.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "AdamState::step".into(),
                        expected: format!("{:?} for {}", m.shape(), net.param_label(layer, pi)),
                        actual: format!("{:?}", g.shape()),
                    });
                }
                if !g.all_finite() {
                    return Err(Error::NonFinite {
                        context: format!("gradient of {}", net.param_label(layer, pi)),
                    });
                }
            }
        }
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for (layer, group) in grads.0.iter().enumerate() {
            for (pi, g) in group.iter().enumerate() {
                let m = self.m[layer][pi].data_mut();
                let v = self.v[layer][pi].data_mut();
                let p = net.params_mut()[layer][pi].data_mut();
                for (j, &gj) in g.data().iter().enumerate() {
                    m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * gj;
                    v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * gj * gj;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    p[j] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                }
            }
        }
        Ok(())
    }
}

/// Exponential-moving-average blend weight for the teacher update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaConfig {
    /// Teacher retention: `theta_tea <- alpha * theta_tea + (1 - alpha) * theta_stu`.
    pub alpha: f64,
}

impl EmaConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!(
                "ema alpha must lie in [0, 1), got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }
}

/// Blends `teacher` parameters — and batch-norm running statistics — toward
/// `student` with the same decay.
///
/// Implemented as `tea += (1 - alpha) * (stu - tea)`, which is exact at the
/// fixed point (`tea == stu` stays bit-identical) and collapses to a plain
/// copy at `alpha == 0`. Running statistics use the identical blend so that
/// an almost-frozen teacher (`alpha` near 1) really is frozen: its eval-mode
/// outputs stay put even while the student's batch statistics wander.
pub fn ema_update(teacher: &mut Network, student: &Network, cfg: EmaConfig) -> Result<()> {
    EmaConfig::new(cfg.alpha)?;
    if teacher.specs() != student.specs() {
        return Err(Error::ShapeMismatch {
            op: "ema_update".into(),
            expected: format!("{} matching layer specs", teacher.specs().len()),
            actual: "a student with a different architecture".into(),
        });
    }
    if cfg.alpha == 0.0 {
        for (t_group, s_group) in teacher.params_mut().iter_mut().zip(student.params()) {
            t_group.clone_from(s_group);
        }
        for (t_stats, s_stats) in teacher.running_mut().iter_mut().zip(student.running()) {
            t_stats.clone_from(s_stats);
        }
        return Ok(());
    }
    let one_minus = 1.0 - cfg.alpha;
    let blend = |t: &mut [f64], s: &[f64]| {
        for (tj, &sj) in t.iter_mut().zip(s) {
            *tj += one_minus * (sj - *tj);
        }
    };
    for (t_group, s_group) in teacher.params_mut().iter_mut().zip(student.params()) {
        for (t, s) in t_group.iter_mut().zip(s_group) {
            blend(t.data_mut(), s.data());
        }
    }
    for (t_stats, s_stats) in teacher.running_mut().iter_mut().zip(student.running()) {
        match (t_stats, s_stats) {
            (Some(t), Some(s)) => {
                blend(&mut t.mean, &s.mean);
                blend(&mut t.var, &s.var);
            }
            (None, None) => {}
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "ema_update".into(),
                    expected: "matching running-statistics layout".into(),
                    actual: "teacher and student disagree on batch-norm layers".into(),
                })
            }
        }
    }
    Ok(())
}
