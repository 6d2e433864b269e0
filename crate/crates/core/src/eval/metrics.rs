use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision threshold on the fake probability.
pub const THRESHOLD: f64 = 0.5;

/// Binary F1 with fake as the positive class (`ŷ >= threshold`).
/// Returns 0 when precision and recall are both zero.
pub fn f1_binary(preds: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::input(format!(
            "f1: {} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::input("f1: empty input"));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &y) in preds.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fneg))
}

/// `2·TP / (2·TP + FP + FN)`, 0 on an empty denominator; algebraically
/// equal to `2PR/(P+R)`.
pub fn f1_from_counts(tp: usize, fp: usize, fneg: usize) -> f64 {
    let denom = 2 * tp + fp + fneg;
    if tp == 0 || denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Macro-averaged F1 over the classes that occur in `truth` or `predicted`.
pub fn macro_f1(predicted: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::input("macro f1: mismatched or empty inputs"));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fneg = vec![0usize; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::input(format!("macro f1: class index outside 0..{classes}")));
        }
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let present: Vec<usize> = (0..classes).filter(|&k| tp[k] + fp[k] + fneg[k] > 0).collect();
    let total: f64 = present.iter().map(|&k| f1_from_counts(tp[k], fp[k], fneg[k])).sum();
    Ok(total / present.len() as f64)
}

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub phase: String,
    pub seed: u64,
    pub epoch: usize,
    /// Mean per-item training loss.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    /// Wall time of the epoch in seconds; the only nondeterministic field.
    pub wall_secs: f64,
}
