//! Adam optimizer and the plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::nn::NnError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

pub const PLATEAU_FACTOR: f64 = 0.9;
pub const PLATEAU_PATIENCE: u32 = 4;

/// Per-parameter Adam state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    first_moments: Vec<f64>,
    second_moments: Vec<f64>,
}

impl AdamState {
    pub fn new(param_len: usize, learning_rate: f64) -> Self {
        AdamState {
            step_count: 0,
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            first_moments: vec![0.0; param_len],
            second_moments: vec![0.0; param_len],
        }
    }

    pub fn param_len(&self) -> usize {
        self.first_moments.len()
    }

    /// One bias-corrected Adam update:
    /// m ← β₁m + (1−β₁)g, v ← β₂v + (1−β₂)g²,
    /// θ ← θ − lr·m̂ / (√v̂ + ε).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        if params.len() != self.first_moments.len() || grads.len() != params.len() {
            return Err(NnError::ShapeMismatch {
                expected: self.first_moments.len(),
                got: if params.len() != self.first_moments.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moments[i] = self.beta1 * self.first_moments[i] + (1.0 - self.beta1) * g;
            self.second_moments[i] =
                self.beta2 * self.second_moments[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moments[i] / bc1;
            let v_hat = self.second_moments[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Multiplies the learning rate by [`PLATEAU_FACTOR`] once the observed
/// validation loss has gone more than [`PLATEAU_PATIENCE`] consecutive epochs
/// without strict improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    factor: f64,
    patience: u32,
    min_lr: f64,
    best_loss: f64,
    epochs_since_improvement: u32,
}

impl PlateauScheduler {
    pub fn new() -> Self {
        PlateauScheduler {
            factor: PLATEAU_FACTOR,
            patience: PLATEAU_PATIENCE,
            min_lr: 0.0,
            best_loss: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }

    /// Observes one epoch's validation loss and returns the (possibly
    /// reduced) learning rate. Call once per epoch.
    pub fn observe(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.epochs_since_improvement = 0;
            return lr;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement > self.patience {
            self.epochs_since_improvement = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new()
    }
}

/// One epoch of a training run, for audit logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

/// A trained model together with its loss history and final optimizer state.
#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub history: Vec<EpochStats>,
    pub optimizer: AdamState,
}
