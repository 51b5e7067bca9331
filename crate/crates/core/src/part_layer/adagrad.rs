use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::PartLayer;
use crate::math::sqrt;
use crate::{Error, Result};

const ADAGRAD_EPS: f64 = 1e-10;

/// Adagrad accumulator with a step-decayed learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdagradState {
    accumulator: Vec<f64>,
    base_lr: f64,
    decay: f64,
    milestones: Vec<usize>,
    epoch: usize,
}

impl AdagradState {
    pub fn new(len: usize, base_lr: f64, decay: f64, milestones: Vec<usize>) -> Self {
        Self {
            accumulator: vec![0.0; len],
            base_lr,
            decay,
            milestones,
            epoch: 0,
        }
    }

    pub fn for_layer(layer: &PartLayer, base_lr: f64, decay: f64, milestones: Vec<usize>) -> Self {
        Self::new(layer.weights().len(), base_lr, decay, milestones)
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accumulator
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    /// `base_lr · decay^(milestones reached)`.
    pub fn effective_lr(&self) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| self.epoch >= m).count();
        let mut lr = self.base_lr;
        for _ in 0..passed {
            lr *= self.decay;
        }
        lr
    }

    /// One update: `acc += g²; w -= lr · g / (sqrt(acc) + 1e-10)`.
    pub fn step(&mut self, layer: &mut PartLayer, grad: &[f64]) -> Result<()> {
        if grad.len() != self.accumulator.len() || grad.len() != layer.weights().len() {
            return Err(Error::Shape(format!(
                "gradient of length {} for {} weights",
                grad.len(),
                layer.weights().len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let lr = self.effective_lr();
        for ((w, acc), g) in layer.weights_mut().iter_mut().zip(&mut self.accumulator).zip(grad) {
            *acc += g * g;
            *w -= lr * g / (sqrt(*acc) + ADAGRAD_EPS);
        }
        Ok(())
    }
}
