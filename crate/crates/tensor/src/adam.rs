use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::param::{Gradients, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam.
///
/// Moment buffers mirror the parameter shapes of the store the optimizer
/// was built for. Arithmetic runs in 64-bit regardless of storage type.
#[derive(Clone, Debug)]
pub struct Adam<T: Float> {
    config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &Tensor<T> {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor<T> {
        &self.second[index]
    }

    /// One update. Every gradient is validated before any parameter
    /// changes, so a rejected step leaves the store and moments untouched.
    /// Parameters without a gradient are skipped.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(TensorError::Parameter(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            if let Some(g) = grads.get(id) {
                if g.shape() != store.get(id).shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "adam_step",
                        lhs: store.get(id).shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
                if !g.is_finite() {
                    return Err(TensorError::NonFiniteGradient(store.name(id).to_string()));
                }
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let correct1 = 1.0 - beta1.powi(t);
        let correct2 = 1.0 - beta2.powi(t);

        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let param = store.get_mut(id).data_mut();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for j in 0..param.len() {
                let gj = g.data()[j].as_f64();
                let mj = beta1 * m[j].as_f64() + (1.0 - beta1) * gj;
                let vj = beta2 * v[j].as_f64() + (1.0 - beta2) * gj * gj;
                m[j] = T::from_f64_lossy(mj);
                v[j] = T::from_f64_lossy(vj);
                let update = lr * (mj / correct1) / ((vj / correct2).sqrt() + eps);
                param[j] = T::from_f64_lossy(param[j].as_f64() - update);
            }
        }
        Ok(())
    }
}
