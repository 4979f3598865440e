use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            first_moment: zeros(),
            second_moment: zeros(),
            step_count: 0,
            config,
        }
    }

    /// One bias-corrected Adam update. A non-finite gradient rejects the whole
    /// step and leaves both parameters and state untouched.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if !p.same_shape(g) || !p.same_shape(&self.first_moment[i]) {
                return Err(Error::Dimension {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter {i}; step rejected"
                )));
            }
        }

        self.step_count += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(epsilon);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                *pi -= step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Cosine decay from `lr0` at step 0 to 0 at `total_steps`, no warmup.
pub fn cosine_lr(step: u64, total_steps: u64, lr0: f64) -> f64 {
    let total = total_steps.max(1);
    if step > total {
        log::warn!("cosine_lr: step {step} beyond schedule end {total}; using 0");
        return 0.0;
    }
    let frac = step as f64 / total as f64;
    (lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(x: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::vector(vec![x])]
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut params = vec![Tensor::<f64>::from_f64(&[2, 2], &[1.0, -2.0, 3.5, 0.25]).unwrap()];
        let before = params.clone();
        let mut state = AdamState::new(&params, AdamConfig::default());
        let grads = vec![Tensor::zeros(&[2, 2])];
        for _ in 0..3 {
            state.step(&mut params, &grads, 0.1).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_closed_form() {
        let mut params = scalar_param(0.0);
        let mut state = AdamState::new(&params, AdamConfig::default());
        state.step(&mut params, &scalar_param(1.0), 0.1).unwrap();
        // m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn two_steps_follow_ema_recurrence() {
        let mut params = scalar_param(0.0);
        let mut state = AdamState::new(&params, AdamConfig::default());
        let g = 0.5;
        for _ in 0..2 {
            state.step(&mut params, &scalar_param(g), 0.01).unwrap();
        }
        assert_eq!(state.step_count, 2);
        let m = 0.9 * (0.1 * g) + 0.1 * g;
        let v = 0.999 * (0.001 * g * g) + 0.001 * g * g;
        assert!((state.first_moment[0].data()[0] - m).abs() < 1e-15);
        assert!((state.second_moment[0].data()[0] - v).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut params = scalar_param(1.0);
        let mut state = AdamState::new(&params, AdamConfig::default());
        let err = state.step(&mut params, &scalar_param(f64::NAN), 0.1);
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(params[0].data()[0], 1.0);
        assert_eq!(state.step_count, 0);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3), 1e-3);
        assert!(cosine_lr(100, 100, 1e-3).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1e-3) - 5e-4).abs() < 1e-15);
        assert_eq!(cosine_lr(101, 100, 1e-3), 0.0);
    }

    #[test]
    fn cosine_schedule_is_monotone() {
        let lrs: Vec<f64> = (0..=40).map(|s| cosine_lr(s, 40, 1.0)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
