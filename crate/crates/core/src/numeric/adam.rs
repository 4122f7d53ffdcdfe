use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled (L2) weight decay: `weight_decay * p` is added to the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Moment estimates for one set of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One Adam update of `params` in place using `grads` (aligned by index).
    pub fn step(&mut self, params: &mut [Tensor], grads: &[&[f64]]) -> Result<()> {
        ensure!(
            params.len() == grads.len() && params.len() == self.first_moment.len(),
            Contract,
            "adam: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            self.first_moment.len()
        );
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            ensure!(
                p.len() == g.len() && p.len() == self.first_moment[i].len(),
                Contract,
                "adam: parameter {i} has {} values, gradient {}, moments {}",
                p.len(),
                g.len(),
                self.first_moment[i].len()
            );
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j] + weight_decay * *w;
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(x: f64) -> Vec<Tensor> {
        vec![Tensor::scalar(x)]
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut params = scalar_param(1.5);
        let mut state = AdamState::new(cfg, &params);
        for _ in 0..5 {
            state.step(&mut params, &[&[0.0]]).unwrap();
        }
        assert_eq!(params[0].data(), &[1.5]);
        assert_eq!(state.step, 5);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // g = 0.5 + 0.01 * 2.0 = 0.52
        // m = 0.1 * 0.52 = 0.052        m_hat = 0.052 / 0.1 = 0.52
        // v = 0.001 * 0.2704 = 2.704e-4 v_hat = 0.2704, sqrt = 0.52
        // p = 2.0 - 0.1 * 0.52 / (0.52 + 1e-8)
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        };
        let mut params = scalar_param(2.0);
        let mut state = AdamState::new(cfg, &params);
        state.step(&mut params, &[&[0.5]]).unwrap();
        let expected = 2.0 - 0.1 * 0.52 / (0.52 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-12);
        assert!((state.first_moment[0][0] - 0.052).abs() < 1e-15);
        assert!((state.second_moment[0][0] - 2.704e-4).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut params = vec![Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap()];
        let mut state = AdamState::new(cfg, &params);
        state.step(&mut params, &[&[0.3, 0.1, -9.0]]).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut params = scalar_param(0.0);
        let mut state = AdamState::new(AdamConfig::default(), &params);
        let err = state.step(&mut params, &[&[0.1, 0.2]]).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
        assert_eq!(state.step, 0);
    }
}
