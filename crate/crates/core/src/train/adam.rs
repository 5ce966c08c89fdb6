use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Parameters};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// Moment estimates and step count. Tensors named in `frozen` are never
/// updated.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Parameters<f32>,
    pub v: Parameters<f32>,
    pub t: u64,
    pub frozen: BTreeSet<String>,
}

impl AdamState {
    pub fn new(params: &Parameters<f32>, config: AdamConfig) -> Self {
        let mut m = Parameters::new();
        for (name, t) in params.iter() {
            m.insert(name.clone(), crate::tensor::DenseMatrix::zeros(t.rows(), t.cols()));
        }
        AdamState {
            config,
            v: m.clone(),
            m,
            t: 0,
            frozen: BTreeSet::new(),
        }
    }

    pub fn freeze(&mut self, name: impl Into<String>) {
        self.frozen.insert(name.into());
    }
}

/// One bias-corrected Adam update, computed per element in f64:
/// `θ ← θ − lr·m̂ / (√v̂ + ε)`.
pub fn adam_step(params: &mut Parameters<f32>, grads: &Gradients<f32>, state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::InvalidModel(format!(
            "Adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (name, p) in params.iter() {
        let g = grads.get(name)?;
        let m = state.m.get(name)?;
        if g.shape() != p.shape() || m.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }
    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (name, p) in params.iter_mut() {
        if state.frozen.contains(name) {
            continue;
        }
        let g = grads.get(name)?.data();
        let m = state.m.get_mut(name).expect("checked above").data_mut();
        let v = state.v.get_mut(name).expect("checked above").data_mut();
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi as f64;
            let m_new = beta1 * *mi as f64 + (1.0 - beta1) * gi;
            let v_new = beta2 * *vi as f64 + (1.0 - beta2) * gi * gi;
            *mi = m_new as f32;
            *vi = v_new as f32;
            let step = lr * (m_new / c1) / ((v_new / c2).sqrt() + epsilon);
            *w = (*w as f64 - step) as f32;
        }
    }
    Ok(())
}
