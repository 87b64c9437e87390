use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
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

/// Bias-corrected Adam. Moment buffers are laid out parallel to the store.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    cfg: AdamConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    t: i32,
}

impl<F: Real> Adam<F> {
    pub fn new(store: &ParamStore<F>, cfg: AdamConfig) -> Self {
        let zeros = |_| store.iter().map(|p| vec![F::zero(); p.value.len()]).collect();
        Adam {
            cfg,
            m: zeros(()),
            v: zeros(()),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore<F>) {
        self.t += 1;
        let b1 = F::lit(self.cfg.beta1);
        let b2 = F::lit(self.cfg.beta2);
        let one = F::one();
        let c1 = F::lit(1.0 - self.cfg.beta1.powi(self.t));
        let c2 = F::lit(1.0 - self.cfg.beta2.powi(self.t));
        let lr = F::lit(self.cfg.lr);
        let eps = F::lit(self.cfg.eps);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                value[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
