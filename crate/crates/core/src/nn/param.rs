//! Trainable parameters and the store that owns them.
//!
//! Parameters are `Rc<RefCell<..>>` so a model struct, the tape, and the
//! optimizer can share them without a lifetime web. The store iterates in
//! sorted-name order everywhere (optimizer steps, checkpoints, snapshots),
//! which is one of the legs determinism stands on.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{CoreError, Result};

use super::rng::StreamRng;
use super::tensor::Tensor;

#[derive(Debug)]
pub struct ParamTensor {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub requires_grad: bool,
}

pub type Param = Rc<RefCell<ParamTensor>>;

pub fn new_param(name: &str, value: Tensor) -> Param {
    let grad = Tensor::zeros(value.shape());
    Rc::new(RefCell::new(ParamTensor {
        name: name.to_string(),
        value,
        grad,
        requires_grad: true,
    }))
}

#[derive(Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<Param> {
        if self.params.contains_key(name) {
            return Err(CoreError::config(format!("duplicate parameter name {name:?}")));
        }
        let p = new_param(name, value);
        self.params.insert(name.to_string(), Rc::clone(&p));
        Ok(p)
    }

    pub fn get(&self, name: &str) -> Option<Param> {
        self.params.get(name).map(Rc::clone)
    }

    /// Parameters in sorted-name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.params.values().map(|p| p.borrow().value.len()).sum()
    }

    pub fn zero_grads(&self) {
        for p in self.params.values() {
            p.borrow_mut().grad.fill(0.0);
        }
    }

    /// Name -> value copy, for best-epoch capture and checkpoints.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), v.borrow().value.clone()))
            .collect()
    }

    /// Restores a snapshot; shapes and the name set must match exactly.
    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(CoreError::Checkpoint(format!(
                "snapshot has {} params, store has {}",
                snapshot.len(),
                self.params.len()
            )));
        }
        for (name, p) in &self.params {
            let stored = snapshot.get(name).ok_or_else(|| {
                CoreError::Checkpoint(format!("snapshot is missing parameter {name:?}"))
            })?;
            let mut pt = p.borrow_mut();
            if pt.value.shape() != stored.shape() {
                return Err(CoreError::Checkpoint(format!(
                    "parameter {name:?} shape {:?} != snapshot {:?}",
                    pt.value.shape(),
                    stored.shape()
                )));
            }
            pt.value = stored.clone();
        }
        Ok(())
    }

    /// L2 norm of each parameter's value, keyed by name.
    pub fn value_norms(&self) -> BTreeMap<String, f64> {
        self.params
            .iter()
            .map(|(k, v)| {
                let n = v.borrow().value.data().iter().map(|x| x * x).sum::<f64>().sqrt();
                (k.clone(), n)
            })
            .collect()
    }
}

// ---- initializers ----

/// Projection init: N(0, 1/fan_in) where fan_in = input width (rows of a
/// weight used as x.W).
pub fn init_projection(rng: &mut StreamRng, fan_in: usize, fan_out: usize) -> Tensor {
    let std = (1.0 / fan_in as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.normal(0.0, std)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("init_projection shape")
}

/// Embedding-table init: N(0, 0.02^2).
pub fn init_embedding(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal(0.0, 0.02)).collect();
    Tensor::new(vec![rows, cols], data).expect("init_embedding shape")
}

pub fn zeros_vec(len: usize) -> Tensor {
    Tensor::vector(vec![0.0; len])
}

pub fn ones_vec(len: usize) -> Tensor {
    Tensor::vector(vec![1.0; len])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(0.0)).unwrap();
        assert!(store.register("w", Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn iteration_is_name_sorted() {
        let mut store = ParamStore::new();
        store.register("z", Tensor::scalar(0.0)).unwrap();
        store.register("a", Tensor::scalar(0.0)).unwrap();
        store.register("m", Tensor::scalar(0.0)).unwrap();
        let names: Vec<&str> = store.iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["a", "m", "z"]);
    }

    #[test]
    fn snapshot_restore_round_trips() {
        let mut store = ParamStore::new();
        let p = store.register("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let snap = store.snapshot();
        p.borrow_mut().value = Tensor::vector(vec![9.0, 9.0]);
        store.restore(&snap).unwrap();
        assert_eq!(p.borrow().value.data(), &[1.0, 2.0]);
    }

    #[test]
    fn projection_init_variance_in_range() {
        let mut rng = StreamRng::for_component(1, "init");
        let w = init_projection(&mut rng, 64, 64);
        let n = w.len() as f64;
        let mean: f64 = w.data().iter().sum::<f64>() / n;
        let var: f64 = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        // Expected var 1/64 = 0.015625; sd of the sample var at n=4096 ~ var*sqrt(2/n) ~ 3.5e-4.
        assert!((var - 1.0 / 64.0).abs() < 2e-3, "sample variance {var}");
    }
}
