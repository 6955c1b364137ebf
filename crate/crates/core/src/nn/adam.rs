use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{ParameterSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates keyed like the parameters they track.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: ParameterSet,
    v: ParameterSet,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u64(self.step);
        self.m.encode(w);
        self.v.encode(w);
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let step = r.u64()?;
        let m = ParameterSet::decode(r)?;
        let v = ParameterSet::decode(r)?;
        Ok(AdamState { step, m, v })
    }
}

/// Bias-corrected Adam update of every parameter, then zeroes the gradients.
///
/// Fails without touching anything if any parameter lacks a gradient.
pub fn adam_step(params: &mut ParameterSet, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
        return Err(Error::Contract(format!("parameter `{name}` has no accumulated gradient")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let (rows, cols) = p.shape();
        if !state.m.contains(name) {
            state.m.insert(name, Tensor::zeros(rows, cols));
            state.v.insert(name, Tensor::zeros(rows, cols));
        }
        let m = state.m.get_mut(name)?.values_mut();
        let v = state.v.get_mut(name)?.values_mut();
        let g = p.grad().expect("checked above").to_vec();
        for (((w, gi), mi), vi) in p.values_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        p.zero_grad();
    }
    Ok(())
}
