//! AdamW and global-norm gradient clipping.

use aacap_autodiff::{Mat, ParamId, ParamStore};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, indexed like the parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl AdamWState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = store.ids().map(|id| Mat::zeros(store.get(id).dim())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Global L2 norm of a set of gradients.
pub fn global_norm(grads: &[(ParamId, Mat)]) -> f64 {
    grads.iter().map(|(_, g)| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [(ParamId, Mat)], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.mapv_inplace(|v| v * s);
        }
    }
    norm
}

/// One AdamW update with decoupled weight decay.
pub fn adamw_step(store: &mut ParamStore, state: &mut AdamWState, grads: &[(ParamId, Mat)], lr: f64, cfg: &AdamWConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (id, g) in grads {
        if !store.is_trainable(*id) {
            continue;
        }
        let m = &mut state.m[id.0];
        let v = &mut state.v[id.0];
        ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
        ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
        let p = store.get_mut(*id);
        ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
            let update = (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
            *p -= lr * (update + cfg.weight_decay * *p);
        });
    }
}
