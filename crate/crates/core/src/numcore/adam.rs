use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::tensor::{Gradients, ParamStore};

pub const DEFAULT_LR: f64 = 1e-4;

/// Bias-corrected Adam. Moment buffers are aligned with the parameter store
/// by position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Self {
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Applies one update to every parameter in `store`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != store.len() || self.first_moment.len() != store.len() {
            return Err(Error::Config(format!(
                "adam: {} parameters, {} gradients, {} moment buffers",
                store.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for id in store.ids() {
            let g = grads.get(id);
            if g.shape != store.get(id).shape {
                return Err(Error::Config(format!(
                    "adam: gradient for {} has shape {:?}, parameter has {:?}",
                    store.name(id),
                    g.shape,
                    store.get(id).shape
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for id in store.ids() {
            let i = id.index();
            let g = &grads.get(id).data;
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let w = &mut store.get_mut(id).data;
            for k in 0..w.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                w[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
    state.step(store, grads)
}
