//! Adam with decoupled state so the main and oversampling optimizers never
//! share moments.

use binpack_tensor::{Checkpoint, HostTensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f32], grad: &[f32]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer sized for {} parameters, got {} and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i] as f64;
            let m = beta1 * self.m[i] as f64 + (1.0 - beta1) * g;
            let v = beta2 * self.v[i] as f64 + (1.0 - beta2) * g * g;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            let update = lr * (m / c1) / ((v / c2).sqrt() + eps);
            params[i] = (params[i] as f64 - update) as f32;
        }
        Ok(())
    }

    /// SHA-256 over the step counter and both moment vectors.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.t.to_le_bytes());
        for x in self.m.iter().chain(&self.v) {
            h.update(x.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn write_to(&self, ck: &mut Checkpoint, prefix: &str) {
        let n = self.m.len();
        ck.push(format!("{prefix}m"), HostTensor::new(vec![n], self.m.clone()).expect("shape matches"));
        ck.push(format!("{prefix}v"), HostTensor::new(vec![n], self.v.clone()).expect("shape matches"));
    }

    pub fn read_from(config: AdamConfig, t: u64, ck: &Checkpoint, prefix: &str, n: usize) -> Result<Self> {
        let get = |k: &str| -> Result<Vec<f32>> {
            let key = format!("{prefix}{k}");
            let t = ck
                .get(&key)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks {key}")))?;
            if t.data.len() != n {
                return Err(Error::Config(format!("{key} has {} entries, expected {n}", t.data.len())));
            }
            Ok(t.data.clone())
        };
        Ok(Self {
            config,
            m: get("m")?,
            v: get("v")?,
            t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut opt = OptimizerState::new(AdamConfig { lr: 0.1, ..Default::default() }, 2);
        let mut p = vec![1.0, 1.0];
        opt.step(&mut p, &[3.0, -0.5]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = OptimizerState::new(AdamConfig::default(), 3);
        let mut p = vec![0.5, -0.25, 2.0];
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![0.5, -0.25, 2.0]);
    }
}
