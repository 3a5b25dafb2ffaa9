//! AdamW: Adam moment estimates with bias correction and decoupled weight
//! decay, `θ ← θ − lr·(m̂/(√v̂+ε) + wd·θ)`.

use std::collections::BTreeMap;

use crate::ndcore::Tensor;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moment buffers keyed by parameter name.
pub type MomentMap = BTreeMap<String, Vec<f64>>;

/// First/second moment estimates per parameter name plus the step counter.
/// Keys are sorted, so iteration and serialization are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    first: MomentMap,
    second: MomentMap,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn from_parts(first: MomentMap, second: MomentMap, step: u64) -> Self {
        Self {
            first,
            second,
            step,
        }
    }

    pub fn moments(&self) -> (&MomentMap, &MomentMap) {
        (&self.first, &self.second)
    }

    /// Zero-filled moments for every named parameter, e.g. for an untrained
    /// checkpoint.
    pub fn zeros_like(params: &[(String, &Tensor)]) -> Self {
        let mut state = Self::new();
        for (name, tensor) in params {
            state.first.insert(name.clone(), vec![0.0; tensor.numel()]);
            state.second.insert(name.clone(), vec![0.0; tensor.numel()]);
        }
        state
    }
}

/// One decoupled-weight-decay Adam update over aligned `(name, θ)` /
/// `(name, g)` lists. Moments are materialized lazily on first touch.
pub fn adamw_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[(String, Tensor)],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step as f64;
    let bias1 = 1.0 - hyper.beta1.powf(t);
    let bias2 = 1.0 - hyper.beta2.powf(t);

    for ((name, theta), (grad_name, grad)) in params.iter_mut().zip(grads) {
        if name != grad_name || grad.numel() != theta.numel() {
            return Err(TrainError::GradShape {
                name: name.clone(),
                expected: theta.numel(),
                got: if name == grad_name { grad.numel() } else { 0 },
            });
        }
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; theta.numel()]);
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; theta.numel()]);
        for ((theta_i, &g), (m_i, v_i)) in theta
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *m_i = hyper.beta1 * *m_i + (1.0 - hyper.beta1) * g;
            *v_i = hyper.beta2 * *v_i + (1.0 - hyper.beta2) * g * g;
            let m_hat = *m_i / bias1;
            let v_hat = *v_i / bias2;
            *theta_i -=
                hyper.learning_rate * (m_hat / (v_hat.sqrt() + hyper.epsilon) + hyper.weight_decay * *theta_i);
        }
    }
    Ok(())
}
