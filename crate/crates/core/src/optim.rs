//! SGD with momentum and weight decay, plus the cosine learning-rate schedule.

use crate::params::{Bound, ParamStore};
use crate::tensor::Grads;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Cosine decay from `lr_init` at step 0 to exactly `lr_final` at the last
/// step (`step` is 0-based over `total_steps`).
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64, lr_final: f64) -> f64 {
    if total_steps <= 1 {
        return lr_final;
    }
    let p = (step.min(total_steps - 1)) as f64 / (total_steps - 1) as f64;
    lr_final + 0.5 * (lr_init - lr_final) * (1.0 + (std::f64::consts::PI * p).cos())
}

/// One SGD step: `buf = momentum*buf + grad + wd*theta; theta -= lr*buf`.
/// Only parameters that received a gradient this step are touched.
pub fn sgd_step(store: &mut ParamStore, bound: &Bound, grads: &Grads, cfg: SgdConfig, lr: f64) {
    for idx in 0..store.len() {
        let id = crate::params::ParamId(idx);
        let Some(grad) = grads.get(bound.var(id)) else {
            continue;
        };
        let entry = &mut store.entries_mut()[idx];
        ndarray::Zip::from(&mut entry.momentum)
            .and(grad)
            .and(&entry.value)
            .for_each(|m, &g, &v| {
                *m = cfg.momentum * *m + g + cfg.weight_decay * v;
            });
        ndarray::Zip::from(&mut entry.value)
            .and(&entry.momentum)
            .for_each(|v, &m| {
                *v -= lr * m;
            });
    }
}
