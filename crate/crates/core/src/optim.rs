//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::validation(format!("invalid optimizer settings: {self:?}")));
        }
        Ok(())
    }
}

/// Optimizer state for one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    config: AdamWConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    decay: Vec<bool>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        let zeros = || {
            store
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        Ok(Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
            decay: vec![true; store.len()],
        })
    }

    /// Exclude parameters from weight decay.
    pub fn without_decay(mut self, ids: &[ParamId]) -> Self {
        for id in ids {
            self.decay[id.index()] = false;
        }
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. `grads[i]` belongs to parameter `i`; `None` leaves
    /// that parameter (and its moments) untouched. Nothing is modified when
    /// any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Dimension {
                context: "AdamW::step",
                expected: format!("{} gradient slots", store.len()),
                actual: grads.len().to_string(),
            });
        }
        for (id, g) in store.ids().zip(grads) {
            if let Some(g) = g {
                if g.shape() != store.get(id).shape() {
                    return Err(Error::Dimension {
                        context: "AdamW::step",
                        expected: format!("{:?}", store.get(id).shape()),
                        actual: format!("{:?}", g.shape()),
                    });
                }
                if !g.all_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for `{}`; step skipped",
                        store.name(id)
                    )));
                }
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        let decay_factor = T::one() - T::lit(c.lr * c.weight_decay);
        let ids: Vec<ParamId> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let p = store.get_mut(id).data_mut();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let decay = self.decay[i] && c.weight_decay > 0.0;
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = b1 * m[k] + (T::one() - b1) * gk;
                v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                if decay {
                    p[k] *= decay_factor;
                }
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
