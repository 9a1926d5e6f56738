use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// One bias-corrected Adam update applied in place. `step` is 1-based.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam optimizer state over a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Tensor, Tensor)>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let moments = store
            .iter()
            .map(|(_, _, t)| (Tensor::zeros(t.shape()), Tensor::zeros(t.shape())))
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient keep their value
    /// but still advance the shared step counter. Non-finite gradients
    /// reject the whole update and leave params and state untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &HashMap<ParamId, Tensor>) -> Result<()> {
        if self.moments.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} params, store has {}",
                self.moments.len(),
                store.len()
            )));
        }
        for (id, g) in grads {
            if g.shape() != store.get(*id).shape() {
                return Err(Error::shape("adam", store.get(*id).shape(), g.shape()));
            }
            if let Some(pos) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} at element {pos} of {}",
                    g.data()[pos],
                    store.name(*id)
                )));
            }
        }
        self.step += 1;
        let mut ids: Vec<_> = grads.keys().copied().collect();
        ids.sort();
        for id in ids {
            let (m, v) = &mut self.moments[id.index()];
            adam_update(
                store.get_mut(id).data_mut(),
                grads[&id].data(),
                m.data_mut(),
                v.data_mut(),
                self.step,
                &self.config,
            );
        }
        Ok(())
    }

    /// First and second moment tensors for `id`.
    pub fn moments(&self, id: ParamId) -> (&Tensor, &Tensor) {
        let (m, v) = &self.moments[id.index()];
        (m, v)
    }

    pub(crate) fn restore(&mut self, step: u64, moments: Vec<(Tensor, Tensor)>) -> Result<()> {
        if moments.len() != self.moments.len() {
            return Err(Error::Format(format!(
                "optimizer state has {} entries, expected {}",
                moments.len(),
                self.moments.len()
            )));
        }
        self.step = step;
        self.moments = moments;
        Ok(())
    }
}
