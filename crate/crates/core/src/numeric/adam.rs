use crate::error::{Error, Result};

use super::params::{Grads, ParamStore};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
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

/// Bias-corrected Adam. Parameters without a gradient in a step are left
/// alone (their moments and step counts do not advance).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: Vec<u64>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect()
        };
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: vec![0; store.len()],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t.iter().copied().max().unwrap_or(0)
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "adam state for {} params, store has {}, grads {}",
                self.m.len(),
                store.len(),
                grads.len()
            )));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        for (id, g) in grads.iter() {
            let i = id.index();
            let p = store.get_mut(id);
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    shapes: vec![p.shape().to_vec(), g.shape().to_vec()],
                });
            }
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((x, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                let m_hat = *mj / c1;
                let v_hat = *vj / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
