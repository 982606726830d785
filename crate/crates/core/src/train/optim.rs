use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::ndiff::ParamStore;

/// Adam moments with optional decoupled weight decay.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl OptimState {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = store
            .iter()
            .map(|(n, p)| (n.clone(), vec![0.0; p.value.len()]))
            .collect();
        OptimState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam step at learning rate `lr`. Parameters flagged
    /// for decay first shrink by `lr·wd·θ`. Gradients are zeroed afterwards.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::shape(
                "optimizer",
                format!("{} parameters, {} moment slots", store.len(), self.m.len()),
            ));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, p) in store.iter_mut() {
            let (m, v) = match (self.m.get_mut(name), self.v.get_mut(name)) {
                (Some(m), Some(v)) if m.len() == p.value.len() => (m, v),
                _ => return Err(Error::shape("optimizer", format!("no moments for {name}"))),
            };
            let decay = if p.decay { lr * self.weight_decay } else { 0.0 };
            for (((theta, g), mi), vi) in p.value.data_mut().iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *theta -= decay * *theta;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                *theta -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}

/// Half-cosine decay from `lr0` at step 0 to zero at `total`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = step.min(total) as f64 / total as f64;
    lr0 * (1.0 + (PI * frac).cos()) / 2.0
}

/// Rescales gradients to global norm `max_norm`; returns whether it fired.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> bool {
    let norm = store.grad_norm();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for (_, p) in store.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
        true
    } else {
        false
    }
}
