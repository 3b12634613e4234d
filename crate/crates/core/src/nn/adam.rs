//! Adam with bias correction. State is keyed by parameter name and stepped in
//! sorted-name order, so an optimizer replay over the same gradients is
//! bit-reproducible.

use std::collections::BTreeMap;

use super::param::ParamStore;
use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    pub cfg: AdamConfig,
    t: u32,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update from the gradients currently accumulated in the store.
    pub fn step(&mut self, store: &ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for (name, p) in store.iter() {
            let mut pt = p.borrow_mut();
            if !pt.requires_grad {
                continue;
            }
            let shape = pt.value.shape().to_vec();
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(&shape));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(&shape));
            let n = pt.value.len();
            for i in 0..n {
                let g = pt.grad.data()[i];
                let mi = self.cfg.beta1 * m.data()[i] + (1.0 - self.cfg.beta1) * g;
                let vi = self.cfg.beta2 * v.data()[i] + (1.0 - self.cfg.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                pt.value.data_mut()[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
    }
}
