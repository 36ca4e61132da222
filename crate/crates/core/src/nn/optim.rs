//! Momentum SGD over whole-model gradients.

use super::{Model, ModelGrads, NnError};

/// Classic momentum: `v ← m·v + g`, `θ ← θ − lr·v`. The velocity lives in
/// the optimizer, so one optimizer instance must stay with one training
/// run.
#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    learning_rate: f64,
    momentum: f64,
    velocity: Option<ModelGrads>,
}

impl SgdOptimizer {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Applies one update. Rejects gradients whose shape does not match the
    /// model and reports divergence on any non-finite gradient entry.
    pub fn step(&mut self, model: &mut Model, grads: &ModelGrads) -> Result<(), NnError> {
        if !grads.matches(model) {
            return Err(NnError::GradientShape);
        }
        if !grads.is_finite() {
            return Err(NnError::Diverged);
        }
        let velocity = self
            .velocity
            .get_or_insert_with(|| ModelGrads::zeros_like(model));
        if !velocity.matches(model) {
            return Err(NnError::GradientShape);
        }
        for ((v, g), layer) in velocity
            .layers_mut()
            .zip(grads.layers())
            .zip(model.encoder.iter_mut().chain(std::iter::once(&mut model.head)))
        {
            v.weights *= self.momentum;
            v.weights += &g.weights;
            v.bias *= self.momentum;
            v.bias += &g.bias;
            layer.weights.scaled_add(-self.learning_rate, &v.weights);
            layer.bias.scaled_add(-self.learning_rate, &v.bias);
        }
        Ok(())
    }
}
