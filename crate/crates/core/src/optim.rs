//! Summed BCE and cross-entropy losses and the Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::membership::DomainId;
use crate::numcore::{ParamStore, Real, Tape, Tensor, Var};

/// Summed binary cross-entropy over fake probabilities; labels are 0/1.
pub fn bce_loss<S: Real>(tape: &mut Tape<S>, preds: Var, labels: &[u8]) -> Result<Var> {
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::input(format!("bce: label {bad} not in {{0, 1}}")));
    }
    let labels: Vec<S> = labels.iter().map(|&y| S::lit(y as f64)).collect();
    tape.bce(preds, &labels)
}

/// Summed cross-entropy over `[N×9]` domain probabilities.
pub fn ce_loss<S: Real>(tape: &mut Tape<S>, probs: Var, labels: &[DomainId]) -> Result<Var> {
    let idx: Vec<usize> = labels.iter().map(|d| d.index()).collect();
    tape.cross_entropy(probs, &idx)
}

/// Loss value only, for reporting.
pub fn bce_value(preds: &[f64], labels: &[u8]) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::vector(preds.to_vec()));
    let l = bce_loss(&mut tape, p, labels)?;
    Ok(tape.value(l).item())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every tensor of one store.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    m: Vec<Vec<S>>,
    u: Vec<Vec<S>>,
    t: u64,
}

impl<S: Real> AdamState<S> {
    pub fn new(store: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, _, v)| vec![S::zero(); v.len()]).collect();
        AdamState {
            config,
            m: zeros(),
            u: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update from the accumulated gradients, which are
    /// cleared afterwards.
    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::usage(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        let t = self.t + 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t as i32);
        let bc2 = 1.0 - c.beta2.powi(t as i32);
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let (one_b1, one_b2) = (S::lit(1.0 - c.beta1), S::lit(1.0 - c.beta2));
        let (bc1, bc2) = (S::lit(bc1), S::lit(bc2));
        let (lr, eps) = (S::lit(c.lr), S::lit(c.eps));
        let (ms, us) = (&mut self.m, &mut self.u);
        store.update_with(|i, value, grad| {
            for (((p, &g), m), u) in value.iter_mut().zip(grad).zip(&mut ms[i]).zip(&mut us[i]) {
                *m = b1 * *m + one_b1 * g;
                *u = b2 * *u + one_b2 * g * g;
                let m_hat = *m / bc1;
                let u_hat = *u / bc2;
                *p = *p - lr * m_hat / (u_hat.sqrt() + eps);
            }
        })?;
        self.t = t;
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step<S: Real>(store: &mut ParamStore<S>, state: &mut AdamState<S>) -> Result<()> {
    state.step(store)
}
