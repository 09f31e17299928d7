//! Adam with global gradient-norm clipping.

use autodiff::{Gradients, ParameterStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Maximum global L2 norm of the gradient over all trainable slots.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 10.0 }
    }
}

/// Everything the training loop mutates.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ParameterStore,
    /// First and second moments, one per slot, shaped like the slot.
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub epoch: usize,
    pub best_metric: Option<f64>,
    pub best_params: ParameterStore,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(params: ParameterStore, seed: u64) -> Self {
        let zeros: Vec<Tensor> = params.slots().iter().map(|s| Tensor::zeros(s.value.shape())).collect();
        TrainState {
            best_params: params.clone(),
            params,
            m: zeros.clone(),
            v: zeros,
            step: 0,
            epoch: 0,
            best_metric: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Global L2 norm over the applicable slots.
pub fn gradient_norm(grads: &Gradients) -> f64 {
    grads
        .slots()
        .iter()
        .filter(|s| s.applicable)
        .flat_map(|s| s.grad.data())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales applicable gradients so their global norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = gradient_norm(grads);
    if norm > max_norm {
        let factor = max_norm / norm;
        for s in grads.slots_mut().iter_mut().filter(|s| s.applicable) {
            s.grad.scale_in_place(factor);
        }
    }
    norm
}

/// Clips, then applies one bias-corrected Adam update to every trainable
/// slot. Frozen slots and their moments are left untouched. Returns the
/// pre-clip gradient norm.
pub fn optimizer_step(
    state: &mut TrainState,
    mut grads: Gradients,
    learning_rate: f64,
    adam: &AdamConfig,
) -> Result<f64, TrainError> {
    if grads.slots().len() != state.params.len() {
        return Err(TrainError::Data(format!(
            "gradient covers {} slots, the store has {}",
            grads.slots().len(),
            state.params.len()
        )));
    }
    if let Some(bad) = grads.slots().iter().find(|s| s.applicable && !s.grad.is_finite()) {
        return Err(TrainError::NonFiniteGradient(bad.name.clone()));
    }
    let norm = clip_gradients(&mut grads, adam.clip_norm);
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    for (id, sg) in grads.slots().iter().enumerate() {
        if !sg.applicable || !state.params.slot(id).trainable {
            continue;
        }
        let (m, v) = (state.m[id].data_mut(), state.v[id].data_mut());
        let value = state.params.slot_mut(id).value.data_mut();
        for (k, &g) in sg.grad.data().iter().enumerate() {
            m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * g;
            v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            value[k] -= learning_rate * m_hat / (v_hat.sqrt() + adam.eps);
        }
    }
    Ok(norm)
}
