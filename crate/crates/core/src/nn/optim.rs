//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::params::{ParamInfo, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    /// Per-element flag: true where weight decay applies.
    decay: Vec<bool>,
}

/// Matrices and kernels decay; biases, norm scales and learned tokens do not.
pub fn decays(info: &ParamInfo) -> bool {
    info.shape.len() >= 2 && !info.name.ends_with("_token")
}

impl AdamW {
    pub fn new<T: Scalar>(store: &ParamStore<T>, weight_decay: f64) -> Self {
        let mut decay = vec![false; store.len()];
        for info in store.infos() {
            if decays(info) {
                decay[info.offset..info.offset + info.len()].iter_mut().for_each(|d| *d = true);
            }
        }
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: vec![0.0; store.len()],
            v: vec![0.0; store.len()],
            decay,
        }
    }

    pub fn update<T: Scalar>(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer built for a different parameter set");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i].as_f64();
            let mut p = params[i].as_f64();
            if self.decay[i] {
                p -= lr * self.weight_decay * p;
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            p -= lr * mhat / (vhat.sqrt() + self.eps);
            params[i] = T::lit(p);
        }
    }
}
