//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Moments are kept in `f64`; a non-finite gradient aborts
    /// before anything changes.
    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state for {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(i));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] as f64;
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] = (params[i] as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut adam = Adam::new(3, AdamConfig::default());
        let mut p = vec![1.0f32, 1.0, 1.0];
        adam.step(&mut p, &[0.3, -2.0, 0.0], 0.01).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((p[1] - (1.0 + 0.01)).abs() < 1e-6);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn zero_gradient_never_moves() {
        let mut adam = Adam::new(2, AdamConfig::default());
        let mut p = vec![0.25f32, -4.0];
        for _ in 0..100 {
            adam.step(&mut p, &[0.0, 0.0], 0.1).unwrap();
        }
        assert_eq!(p, vec![0.25, -4.0]);
    }

    #[test]
    fn opposite_gradients_give_mirrored_updates() {
        let mut adam = Adam::new(2, AdamConfig::default());
        let mut p = vec![0.0f32, 0.0];
        adam.step(&mut p, &[0.7, -0.7], 1e-3).unwrap();
        assert_eq!(p[0], -p[1]);
        assert!(p[0] < 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        let mut adam = Adam::new(2, AdamConfig::default());
        let mut p = vec![0.0f32; 2];
        assert!(matches!(
            adam.step(&mut p, &[1.0, f32::NAN], 0.1),
            Err(Error::NonFiniteGradient(1))
        ));
        assert_eq!(adam.steps(), 0);
    }
}
