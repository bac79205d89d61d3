use serde::{Deserialize, Serialize};

use super::layers::Param;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers follow the order of the parameter list
/// passed to [`step`](Adam::step); non-trainable entries are skipped.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<T: Scalar>(&mut self, params: Vec<&mut Param<T>>, lr: f64) {
        let trainable: Vec<&mut Param<T>> = params.into_iter().filter(|p| p.trainable).collect();
        if self.m.is_empty() {
            self.m = trainable.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), trainable.len(), "parameter list changed between steps");
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in trainable.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i].as_f64();
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let upd = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                p.value[i] = T::c(p.value[i].as_f64() - upd);
            }
        }
    }
}

/// `lr(epoch) = initial * gamma^epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialLr {
    pub initial: f64,
    pub gamma: f64,
}

impl ExponentialLr {
    pub fn lr(&self, epoch: usize) -> f64 {
        self.initial * self.gamma.powi(epoch as i32)
    }
}
