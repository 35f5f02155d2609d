//! AdamW and the cosine learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::Mat;

/// `lr(t) = lr_final + ½(lr_init − lr_final)(1 + cos(πt/T))` for `t ∈ [0, T]`.
/// With `T = 0` the schedule is the constant `lr_init`.
pub fn cosine_lr(step: usize, total: usize, lr_init: f64, lr_final: f64) -> f64 {
    if total == 0 || step == 0 {
        return lr_init;
    }
    if step >= total {
        return lr_final;
    }
    let t = step as f64 / total as f64;
    lr_final + 0.5 * (lr_init - lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Decoupled weight decay with bias-corrected moments.
///
/// Decay applies to parameters whose names end in `.weight`; norms, biases,
/// embeddings and the temperature are left alone.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
    decay: Vec<bool>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: store.iter().map(|(_, _, p)| Mat::zeros(p.rows, p.cols)).collect(),
            v: store.iter().map(|(_, _, p)| Mat::zeros(p.rows, p.cols)).collect(),
            decay: store.iter().map(|(_, n, _)| n.ends_with(".weight")).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) -> Result<()> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate {lr}")));
        }
        if self.m.len() != store.len() {
            return Err(Error::shape("optimizer state does not match the parameter store"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..store.len() {
            let id = ParamId(i);
            let p = store.get_mut(id);
            if self.decay[i] && self.weight_decay > 0.0 {
                let k = 1.0 - lr * self.weight_decay;
                p.data.iter_mut().for_each(|x| *x *= k);
            }
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m.data[j] = self.beta1 * m.data[j] + (1.0 - self.beta1) * gj;
                v.data[j] = self.beta2 * v.data[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m.data[j] / bc1;
                let vh = v.data[j] / bc2;
                p.data[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Euclidean norm over every gradient entry.
pub fn grad_norm(grads: &Grads, store: &ParamStore) -> f64 {
    store
        .ids()
        .filter_map(|id| grads.get(id))
        .flat_map(|g| g.data.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales to norm `max_norm` when above it; returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut Grads, store: &ParamStore, max_norm: f64) -> f64 {
    let n = grad_norm(grads, store);
    if n > max_norm && n > 0.0 {
        grads.scale(max_norm / n);
    }
    n
}
