use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::numerics::ParamStore;

/// Adam with decoupled weight decay. Decay applies to matrices and kernels,
/// not to vectors (biases, norms, skip gains).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: &TrainingConfig) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    /// Applies one update from `grads` (parameter name to flat gradient).
    /// Frozen parameters and parameters without a gradient are left alone.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &IndexMap<String, Vec<f64>>,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let Some(gr) = grads.get(name) else { continue };
            if gr.len() != p.value.len() {
                return Err(Error::Dimension(format!(
                    "gradient for {name} has {} entries, parameter has {}",
                    gr.len(),
                    p.value.len()
                )));
            }
            let n = gr.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let decay = if p.value.ndim() >= 2 {
                self.weight_decay
            } else {
                0.0
            };
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gr[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gr[i] * gr[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *w -= self.lr * (mh / (vh.sqrt() + self.eps) + decay * *w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::row_vector(&[1.0, -2.0]));
        let cfg = TrainingConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(&cfg);
        let mut grads = IndexMap::new();
        grads.insert("w".to_string(), vec![3.0, -0.5]);
        opt.step(&mut store, &grads).unwrap();
        let w = store.value("w").unwrap().data();
        assert!(
            (w[0] - 0.9).abs() < 1e-7 && (w[1] + 1.9).abs() < 1e-7,
            "{w:?}"
        );
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::row_vector(&[1.0]));
        store.set_trainable("w", false).unwrap();
        let mut opt = AdamW::new(&TrainingConfig::default());
        let mut grads = IndexMap::new();
        grads.insert("w".to_string(), vec![1.0]);
        opt.step(&mut store, &grads).unwrap();
        assert_eq!(store.value("w").unwrap().data(), &[1.0]);
    }
}
