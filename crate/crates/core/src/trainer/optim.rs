//! Adaptive-moment optimizer and global gradient clipping.

use super::TrainError;
use crate::params::ParamStore;

/// First and second moments per learnable parameter, in store order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<(String, Vec<f64>)>,
    pub v: Vec<(String, Vec<f64>)>,
    /// Number of steps taken.
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.learnable().map(|e| (e.name.clone(), vec![0.0; e.tensor.len()])).collect();
        AdamState { m: zeros(), v: zeros(), t: 0 }
    }
}

/// Global L2 norm of `grads`, rescaling them in place to at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [(String, Vec<f64>)], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|(_, g)| g.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().flat_map(|(_, g)| g.iter_mut()).for_each(|g| *g *= k);
    }
    norm
}

/// One bias-corrected Adam update. `grads` must follow the state's
/// parameter order; missing gradients are treated as zero.
pub fn optimizer_step(
    store: &mut ParamStore,
    grads: &[(String, Vec<f64>)],
    state: &mut AdamState,
    lr: f64,
    hp: AdamParams,
) -> Result<(), TrainError> {
    if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(TrainError::NonFiniteGradient(name.clone()));
    }
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - hp.beta1.powf(t);
    let c2 = 1.0 - hp.beta2.powf(t);
    for ((name, m), (_, v)) in state.m.iter_mut().zip(state.v.iter_mut()) {
        let g = grads.iter().find(|(n, _)| n == name).map(|(_, g)| g.as_slice());
        let p = store.get_mut(name)?.data_mut();
        for i in 0..p.len() {
            let gi = g.map_or(0.0, |g| g[i]);
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * gi;
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * gi * gi;
            if lr > 0.0 {
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + hp.eps);
            }
        }
    }
    Ok(())
}
