//! Adam with bias correction.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Adam optimizer state. One instance drives an entire [`ParamStore`]; the
/// first and second moment estimates are kept per parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
}

impl Adam {
    /// Standard defaults: `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: IndexMap::new(), v: IndexMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update from named gradients (as produced by
    /// `Graph::backward`). Rejects non-finite gradients before touching any
    /// parameter, and verifies parameters stay finite afterwards.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(String, Tensor)]) -> Result<()> {
        for (name, g) in grads {
            if let Some((i, v)) = g.first_non_finite() {
                return Err(Error::non_finite_at(
                    "Adam::step",
                    format!("gradient {name}[{i}] = {v}"),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros_like(g));
            for (mv, &gv) in m.data_mut().iter_mut().zip(g.data()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
            }
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros_like(g));
            for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
            }
            let m = &self.m[name.as_str()];
            let v = &self.v[name.as_str()];
            let p = store.get_mut(name);
            assert_eq!(p.shape(), g.shape(), "gradient shape for {name}");
            for ((pv, mv), vv) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let mh = mv / bc1;
                let vh = vv / bc2;
                *pv -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        store.check_finite("Adam::step")
    }
}
