use super::params::ParamStore;
use crate::error::{ensure, Result};

/// Moment estimates for [`adam_step`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &ParamStore, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter that holds a
/// gradient. Gradients are left in place.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    ensure!(lr > 0.0 && lr.is_finite(), "learning rate must be positive, got {lr}");
    ensure!(
        state.m.len() == params.len(),
        "optimizer state tracks {} tensors but the store has {}",
        state.m.len(),
        params.len()
    );
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let p = params.get_mut(id);
        if !p.requires_grad() {
            continue;
        }
        let Some(g) = p.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        let m = &mut state.m[id.index()];
        let v = &mut state.v[id.index()];
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
