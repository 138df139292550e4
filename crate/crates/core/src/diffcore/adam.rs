use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::shape("adam", p.value.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .params_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let it = p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((w, &gi), (mi, vi)) in it {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::scalar(v));
        ps
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = scalar_set(0.5);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        adam.update(&mut ps, &[Tensor::scalar(1.0)]).unwrap();
        let expected = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((ps.flatten()[0] - expected).abs() < 1e-16);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_and_zero_rate_leave_parameters() {
        let mut ps = scalar_set(0.5);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        adam.update(&mut ps, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(ps.flatten(), vec![0.5]);

        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, &ps);
        for g in [3.0, -1.0, 7.5] {
            adam.update(&mut ps, &[Tensor::scalar(g)]).unwrap();
        }
        assert_eq!(ps.flatten(), vec![0.5]);
    }

    #[test]
    fn two_steps_match_reference_recurrence() {
        // Scalar reference written directly from the published recurrences.
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let grads = [0.3, 0.3];
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }

        let mut ps = scalar_set(1.0);
        let mut adam = AdamState::new(
            AdamConfig {
                learning_rate: lr,
                beta1: b1,
                beta2: b2,
                eps,
            },
            &ps,
        );
        for g in grads {
            adam.update(&mut ps, &[Tensor::scalar(g)]).unwrap();
        }
        assert!((ps.flatten()[0] - w).abs() < 1e-15);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut ps = scalar_set(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        let err = adam.update(&mut ps, &[Tensor::scalar(f64::NAN)]).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(adam.step_count(), 0);
    }
}
