//! Adam and the JSON checkpoint format.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ParamStore, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.data.len()]).collect();
        AdamState { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One bias-corrected Adam update, then clears the gradients. Parameters
    /// without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.iter().all(|p| p.grad.is_none()) {
            return Err(TensorError::MissingGradient);
        }
        // Parameters registered after construction start from zero moments.
        while self.m.len() < store.len() {
            let n = store.get(super::ParamId(self.m.len())).data.len();
            self.m.push(vec![0.0; n]);
            self.v.push(vec![0.0; n]);
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let p = store.get_mut(id);
            let Some(grad) = p.grad.take() else { continue };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for k in 0..p.data.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p.data[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("parameter {0} missing from checkpoint")]
    MissingParam(String),
    #[error("parameter {name} has shape {got:?} in checkpoint, expected {expected:?}")]
    Shape { name: String, expected: Vec<usize>, got: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAdam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

/// `{"format_version":1, "params":{..}, "adam":{..}, "step":n}` plus
/// free-form metadata (the encoder configuration, for models).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub params: BTreeMap<String, StoredTensor>,
    pub adam: Option<StoredAdam>,
    pub step: u64,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn capture(store: &ParamStore, adam: Option<&AdamState>, step: u64, meta: serde_json::Value) -> Self {
        let params = store
            .iter()
            .map(|p| (p.name.clone(), StoredTensor { shape: p.shape.clone(), data: p.data.clone() }))
            .collect();
        let adam = adam.map(|a| {
            let named = |mom: &[Vec<f64>]| -> BTreeMap<String, Vec<f64>> {
                store.iter().zip(mom).map(|(p, m)| (p.name.clone(), m.clone())).collect()
            };
            StoredAdam {
                lr: a.config.lr,
                beta1: a.config.beta1,
                beta2: a.config.beta2,
                eps: a.config.eps,
                t: a.t,
                m: named(&a.m),
                v: named(&a.v),
            }
        });
        Checkpoint { format_version: Self::FORMAT_VERSION, params, adam, step, meta }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, CheckpointError> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format_version != Self::FORMAT_VERSION {
            return Err(CheckpointError::Version(c.format_version));
        }
        Ok(c)
    }

    /// Overwrites every store parameter with the checkpointed value.
    pub fn restore(&self, store: &mut ParamStore) -> std::result::Result<(), CheckpointError> {
        for id in store.ids().collect::<Vec<_>>() {
            let p = store.get_mut(id);
            let stored = self.params.get(&p.name).ok_or_else(|| CheckpointError::MissingParam(p.name.clone()))?;
            if stored.shape != p.shape {
                return Err(CheckpointError::Shape { name: p.name.clone(), expected: p.shape.clone(), got: stored.shape.clone() });
            }
            p.data.clone_from(&stored.data);
            p.grad = None;
        }
        Ok(())
    }

    pub fn restore_adam(&self, store: &ParamStore) -> Option<AdamState> {
        let a = self.adam.as_ref()?;
        let pick = |mom: &BTreeMap<String, Vec<f64>>| -> Option<Vec<Vec<f64>>> {
            store.iter().map(|p| mom.get(&p.name).cloned()).collect()
        };
        Some(AdamState {
            config: AdamConfig { lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps },
            m: pick(&a.m)?,
            v: pick(&a.v)?,
            t: a.t,
        })
    }
}
