//! Momentum SGD with L2 weight decay.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            weight_decay: 1e-4,
            momentum: 0.9,
            epochs: 6,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        Ok(())
    }
}

/// `v ← momentum·v − lr·(g + decay·p)`, then `p ← p + v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    learning_rate: f64,
    weight_decay: f64,
    momentum: f64,
) -> Result<()> {
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(Error::shape(
            format!("{} values", params.len()),
            format!("{} gradients, {} velocities", grads.len(), velocity.len()),
        ));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - learning_rate * (g + weight_decay * *p);
        *p += *v;
    }
    Ok(())
}

/// Velocity buffers keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, name: &str, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) -> Result<()> {
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; params.len()]);
        sgd_step(params, grads, v, cfg.learning_rate, cfg.weight_decay, cfg.momentum)
    }
}
