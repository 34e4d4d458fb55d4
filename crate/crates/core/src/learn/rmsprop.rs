//! RMSprop:
//!
//! ```text
//! E[g²] ← γ E[g²] + (1 − γ) g²
//! θ ← θ − λ g / √(E[g²] + ε)
//! ```

use serde::{Deserialize, Serialize};

use super::model::PolicyModel;
use super::LearnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub running_sq_grad: Vec<f64>,
    pub steps: u64,
    pub lambda: f64,
    pub gamma: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(n_params: usize, lambda: f64, gamma: f64, eps: f64) -> Self {
        Self {
            running_sq_grad: vec![0.0; n_params],
            steps: 0,
            lambda,
            gamma,
            eps,
        }
    }

    /// Updates `params` in place with gradient `grad`, both flat.
    pub fn step_flat(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), LearnError> {
        if params.len() != self.running_sq_grad.len() || grad.len() != params.len() {
            return Err(LearnError::Shape(format!(
                "optimizer tracks {} parameters, got {} / {}",
                self.running_sq_grad.len(),
                params.len(),
                grad.len()
            )));
        }
        for ((p, &g), e) in params.iter_mut().zip(grad).zip(self.running_sq_grad.iter_mut()) {
            *e = self.gamma * *e + (1.0 - self.gamma) * g * g;
            *p -= self.lambda * g / (*e + self.eps).sqrt();
        }
        self.steps += 1;
        Ok(())
    }

    /// Updates every block of `model` with the matching block of `grad`.
    pub fn step(&mut self, model: &mut PolicyModel, grad: &PolicyModel) -> Result<(), LearnError> {
        if model.shape != grad.shape {
            return Err(LearnError::Shape("gradient shape differs from model".into()));
        }
        let mut flat = flatten(model);
        self.step_flat(&mut flat, &flatten(grad))?;
        unflatten(model, &flat);
        Ok(())
    }
}

pub fn flatten(model: &PolicyModel) -> Vec<f64> {
    model.params().into_iter().flat_map(|(_, b)| b.iter().copied()).collect()
}

pub fn unflatten(model: &mut PolicyModel, flat: &[f64]) {
    let mut off = 0;
    for (_, b) in model.params_mut() {
        b.copy_from_slice(&flat[off..off + b.len()]);
        off += b.len();
    }
}
