use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use super::tensor::{Real, Tensor};

/// Adam moment estimates for every parameter in a store.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct AdamState<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(store: &ParameterStore<F>, lr: f64) -> Self {
        let zeros = || store.ids().map(|id| {
            let v = store.value(id);
            Tensor::zeros(v.rows(), v.cols())
        });
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: zeros().collect(), second: zeros().collect() }
    }
}

/// One bias-corrected Adam update using the gradients currently held in `store`.
pub fn adam_step<F: Real>(store: &mut ParameterStore<F>, state: &mut AdamState<F>) {
    assert_eq!(state.first.len(), store.len(), "optimizer state does not match parameters");
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (F::lit(state.beta1), F::lit(state.beta2));
    let correction1 = 1.0 - state.beta1.powi(t);
    let correction2 = 1.0 - state.beta2.powi(t);
    let step_size = F::lit(state.lr / correction1);
    let inv_sqrt_c2 = F::lit(1.0 / correction2.sqrt());
    let eps = F::lit(state.eps);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (value, grad) = store.value_and_grad_mut(id);
        let m = state.first[id.0].data_mut();
        let v = state.second[id.0].data_mut();
        for (((p, &g), mi), vi) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (F::one() - b1) * g;
            *vi = b2 * *vi + (F::one() - b2) * g * g;
            *p -= step_size * *mi / ((*vi).sqrt() * inv_sqrt_c2 + eps);
        }
    }
}

/// Rescales all gradients so their global l2 norm is at most `max_norm`.
/// Returns the factor applied (1 when no clipping happened).
pub fn clip_grad_norm<F: Real>(store: &mut ParameterStore<F>, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm <= max_norm || !norm.is_finite() {
        return 1.0;
    }
    let scale = max_norm / norm;
    let s = F::lit(scale);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.grad_mut(id).scale_in_place(s);
    }
    scale
}
