//! Adam with an optional step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Multiply the learning rate by `factor` every `interval` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub factor: f64,
    pub interval: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub base_lr: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: Option<StepDecay>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            step: 0,
            base_lr: lr,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: None,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64, eps: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.eps = eps;
        self
    }

    pub fn with_decay(mut self, factor: f64, interval: u64) -> Result<Self> {
        if interval == 0 || !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::Invalid(format!(
                "decay needs interval > 0 and factor in (0, 1], got {interval}, {factor}"
            )));
        }
        self.decay = Some(StepDecay { factor, interval });
        Ok(self)
    }

    /// Learning rate in effect after `step` completed steps.
    pub fn lr_after(&self, step: u64) -> f64 {
        match self.decay {
            Some(d) => self.base_lr * d.factor.powi((step / d.interval) as i32),
            None => self.base_lr,
        }
    }
}

/// One Adam update of every parameter in `store` from its grad slot.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if state.m.is_empty() {
        state.m = store.entries().iter().map(|e| vec![0.0; e.tensor.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != store.len()
        || state
            .m
            .iter()
            .zip(store.entries())
            .any(|(m, e)| m.len() != e.tensor.len())
    {
        return Err(Error::shape("adam_step", "moment buffers do not match parameters"));
    }
    if let Some(e) = store.entries().iter().find(|e| e.tensor.grad().is_none()) {
        return Err(Error::MissingGradient(e.name.clone()));
    }

    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    let lr = state.lr;
    for (k, entry) in store.entries_mut().iter_mut().enumerate() {
        let grad = entry.tensor.grad().map(<[f64]>::to_vec).unwrap_or_default();
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, p) in entry.tensor.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            *p -= lr * mhat / (vhat.sqrt() + state.eps);
        }
        if entry.tensor.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("adam update of {}", entry.name)));
        }
    }
    state.lr = state.lr_after(state.step);
    Ok(())
}
