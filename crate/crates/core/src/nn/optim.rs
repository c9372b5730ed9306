use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors plus Adam moment buffers.
#[derive(Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

/// One gradient tensor per parameter, in store order.
#[derive(Clone, Debug)]
pub struct Grads(pub Vec<Tensor>);

impl Grads {
    pub fn global_norm(&self) -> f64 {
        self.0.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let k = max_norm / norm;
            for g in &mut self.0 {
                g.scale_assign(k);
            }
        }
        norm
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.0 {
            g.scale_assign(k);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.m.push(Tensor::zeros(value.shape()));
        self.v.push(Tensor::zeros(value.shape()));
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.values[id.0])
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    /// Replaces a parameter and resets its optimiser state.
    pub fn replace(&mut self, id: ParamId, value: Tensor) {
        self.m[id.0] = Tensor::zeros(value.shape());
        self.v[id.0] = Tensor::zeros(value.shape());
        self.values[id.0] = Arc::new(value);
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grads: &Grads, lr: f64, cfg: &AdamConfig) {
        assert_eq!(grads.0.len(), self.values.len(), "gradient count");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.values.len() {
            let g = grads.0[i].data();
            let m = self.m[i].data_mut();
            for (mj, &gj) in m.iter_mut().zip(g) {
                *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
            }
            let v = self.v[i].data_mut();
            for (vj, &gj) in v.iter_mut().zip(g) {
                *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
            }
            let (m, v) = (&self.m[i], &self.v[i]);
            let w = Arc::make_mut(&mut self.values[i]).data_mut();
            for j in 0..w.len() {
                let mhat = m.data()[j] / c1;
                let vhat = v.data()[j] / c2;
                w[j] -= lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
    }

    /// Flattened copy of every parameter value, in store order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.data().iter().copied()).collect()
    }
}
