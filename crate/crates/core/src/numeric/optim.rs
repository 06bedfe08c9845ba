//! SGD and Adam parameter updates.

use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, MlpModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    first_moment: Option<Gradients>,
    second_moment: Option<Gradients>,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            first_moment: None,
            second_moment: None,
            step_count: 0,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to `model`. A non-finite gradient entry aborts the
    /// step before any parameter changes.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) -> Result<()> {
        if !grads.matches_shape(model) {
            return Err(Error::Shape("gradient record does not match model".into()));
        }
        if let Some(layer) = grads.first_non_finite_layer() {
            return Err(Error::NonFiniteGradient { layer });
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => model.apply_update(grads, -self.learning_rate),
            OptimizerKind::Adam => {
                let m = self
                    .first_moment
                    .get_or_insert_with(|| Gradients::zeros_like(model));
                let v = self
                    .second_moment
                    .get_or_insert_with(|| Gradients::zeros_like(model));
                let t = self.step_count as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                let lr = self.learning_rate;
                for (((p, g), m), v) in model
                    .parameters_mut()
                    .zip(grads.values())
                    .zip(m.values_mut())
                    .zip(v.values_mut())
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}
