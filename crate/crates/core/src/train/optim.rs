use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One RMSProp update in place:
/// `s ← ρ·s + (1−ρ)·g²`, `p ← p − lr·g / √(s + ε)`.
pub fn rmsprop_step(param: &mut [f64], grad: &[f64], state: &mut [f64], lr: f64, decay: f64, eps: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
    }
    if param.len() != grad.len() || param.len() != state.len() {
        return Err(Error::shape(
            "rmsprop_step",
            format!("param {}, grad {}, state {}", param.len(), grad.len(), state.len()),
        ));
    }
    for ((p, g), s) in param.iter_mut().zip(grad).zip(state.iter_mut()) {
        *s = decay * *s + (1.0 - decay) * g * g;
        *p -= lr * g / (*s + eps).sqrt();
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Patience-based early stopping on a loss that must strictly improve.
/// Epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    max_epochs: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        Self {
            patience,
            max_epochs,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Records the next epoch's loss. Returns whether it is a new best and
    /// whether training should stop after it.
    pub fn observe(&mut self, loss: f64) -> (bool, StopDecision) {
        self.epoch += 1;
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
        }
        let stop = self.epoch >= self.max_epochs || self.epoch - self.best_epoch >= self.patience;
        (improved, if stop { StopDecision::Stop } else { StopDecision::Continue })
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    pub fn epochs_seen(&self) -> usize {
        self.epoch
    }
}

/// Replays a loss trace; returns `(epochs run, best epoch)`.
pub fn replay_trace(trace: &[f64], patience: usize, max_epochs: usize) -> (usize, usize) {
    let mut s = EarlyStopper::new(patience, max_epochs);
    for &l in trace {
        if s.observe(l).1 == StopDecision::Stop {
            break;
        }
    }
    (s.epochs_seen(), s.best_epoch())
}
