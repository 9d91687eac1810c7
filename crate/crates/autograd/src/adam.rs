use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamStore<S>) -> Self {
        let m: Vec<Vec<S>> = params.iter().map(|(_, t)| vec![S::zero(); t.numel()]).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<S: Scalar>(
    params: &mut ParamStore<S>,
    grads: &[Vec<S>],
    state: &mut AdamState<S>,
    cfg: &AdamConfig,
) {
    assert_eq!(grads.len(), params.len(), "one gradient per parameter");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
    let (one_b1, one_b2) = (S::of(1.0 - cfg.beta1), S::of(1.0 - cfg.beta2));
    let (inv_c1, inv_c2) = (S::of(1.0 / c1), S::of(1.0 / c2));
    let (lr, eps) = (S::of(cfg.lr), S::of(cfg.eps));
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            let m_hat = *mi * inv_c1;
            let v_hat = *vi * inv_c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
