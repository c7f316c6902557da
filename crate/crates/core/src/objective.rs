//! Scalar losses, class weights and the training-time schedules.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Mat};
use crate::corpus::{Corpus, LabelCounts, MoralLabelVector, NUM_CLASSES};
use crate::error::{Error, Result};

/// Weight used for a class with no positive training examples.
pub const DEGENERATE_CLASS_WEIGHT: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: [f64; NUM_CLASSES],
}

impl ClassWeights {
    pub fn uniform() -> Self {
        Self { w: [1.0; NUM_CLASSES] }
    }
}

/// Weights from the labeled documents of `corpus`.
pub fn compute_class_weights(corpus: &Corpus) -> ClassWeights {
    class_weights_from_counts(&corpus.recompute_label_counts())
}

/// `w_c = negatives_c / positives_c`, capped when a class has no positives.
pub fn class_weights_from_counts(counts: &LabelCounts) -> ClassWeights {
    let mut w = [1.0; NUM_CLASSES];
    for (c, wc) in w.iter_mut().enumerate() {
        let pos = counts.positives[c];
        *wc = if pos == 0 {
            DEGENERATE_CLASS_WEIGHT
        } else {
            counts.negatives[c] as f64 / pos as f64
        };
    }
    ClassWeights { w }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossHyperParams {
    pub lambda_rec: f64,
    /// `None` disables the transformation layer and its regularizer.
    pub lambda_trans: Option<f64>,
    pub gamma: f64,
}

impl Default for LossHyperParams {
    fn default() -> Self {
        Self {
            lambda_rec: 0.1,
            lambda_trans: Some(0.1),
            gamma: 1.0,
        }
    }
}

impl LossHyperParams {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.lambda_rec >= 0.0 && self.lambda_rec.is_finite()) {
            errs.push(format!("lambda_rec must be >= 0, got {}", self.lambda_rec));
        }
        if let Some(t) = self.lambda_trans {
            if !(t >= 0.0 && t.is_finite()) {
                errs.push(format!("lambda_trans must be >= 0, got {t}"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            errs.push(format!("gamma must be > 0, got {}", self.gamma));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub current_epoch: usize,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub lr_init: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ScheduleState {
    pub fn new(warmup_epochs: usize, total_epochs: usize, lr_init: f64) -> Self {
        Self {
            current_epoch: 0,
            warmup_epochs,
            total_epochs,
            lr_init,
            alpha: 10.0,
            beta: 0.25,
        }
    }

    pub fn at(self, epoch: usize) -> Self {
        Self {
            current_epoch: epoch,
            ..self
        }
    }

    pub fn in_warmup(&self) -> bool {
        self.current_epoch < self.warmup_epochs
    }
}

/// `2 / (1 + exp(-gamma p)) - 1` with `p = (epoch - warmup) / total`; zero
/// during warm-up.
pub fn lambda_d(state: &ScheduleState, gamma: f64) -> f64 {
    if state.in_warmup() || state.total_epochs == 0 {
        return 0.0;
    }
    let p = (state.current_epoch - state.warmup_epochs) as f64 / state.total_epochs as f64;
    2.0 / (1.0 + (-gamma * p).exp()) - 1.0
}

/// `lr_init / (1 + alpha p)^beta` with `p = epoch / total`.
pub fn lr_at(state: &ScheduleState) -> f64 {
    let p = if state.total_epochs == 0 {
        0.0
    } else {
        state.current_epoch as f64 / state.total_epochs as f64
    };
    state.lr_init / (1.0 + state.alpha * p).powf(state.beta)
}

/// Mean over all `N x 10` terms, weight on the positive term only.
pub fn weighted_bce(logits: &Mat, labels: &[MoralLabelVector], weights: &ClassWeights) -> Result<f64> {
    if logits.ncols() != NUM_CLASSES {
        return Err(Error::DimensionMismatch {
            expected: NUM_CLASSES,
            actual: logits.ncols(),
        });
    }
    if logits.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.nrows(),
            actual: labels.len(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (row, y) in logits.outer_iter().zip(labels) {
        for (c, &x) in row.iter().enumerate() {
            sum += if y.get(c) {
                weights.w[c] * softplus(-x)
            } else {
                softplus(x)
            };
        }
    }
    Ok(sum / logits.len() as f64)
}

/// Mean softmax cross-entropy.
pub fn domain_ce(logits: &Mat, labels: &[usize]) -> Result<f64> {
    if logits.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.nrows(),
            actual: labels.len(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let d = logits.ncols();
    let mut sum = 0.0;
    for (row, &label) in logits.outer_iter().zip(labels) {
        if label >= d {
            return Err(Error::DomainOutOfRange {
                index: label,
                num_domains: d,
            });
        }
        let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        sum += lse - row[label];
    }
    Ok(if labels.is_empty() { 0.0 } else { sum / labels.len() as f64 })
}

/// Logged objective `rec + trans + mf - lambda_d * d`.
pub fn total_loss(l_rec: f64, l_trans: f64, l_mf: f64, l_d: f64, hp: &LossHyperParams, lambda_d_val: f64) -> f64 {
    let trans = hp.lambda_trans.map_or(0.0, |t| t * l_trans);
    hp.lambda_rec * l_rec + trans + l_mf - lambda_d_val * l_d
}
