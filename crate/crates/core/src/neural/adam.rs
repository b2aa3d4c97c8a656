//! Adam optimizer state and the per-group update rule.

use crate::neural::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter group plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_shapes(shapes: &[&[usize]]) -> Self {
        Self {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
        }
    }
}

/// One Adam update for a single parameter group, with bias correction for
/// step `t` (1-based).
#[allow(clippy::too_many_arguments)]
pub fn adam_update_group<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    hyper: &AdamHyper,
    lr_t: f64,
    t: u64,
) {
    debug_assert_eq!(params.len(), grads.len());
    let b1 = T::of(hyper.beta1);
    let b2 = T::of(hyper.beta2);
    let one = T::one();
    let eps = T::of(hyper.epsilon);
    let corr1 = T::of(1.0 - hyper.beta1.powi(t as i32));
    let corr2 = T::of(1.0 - hyper.beta2.powi(t as i32));
    let lr = T::of(lr_t);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / corr1;
        let v_hat = v[i] / corr2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Inverse-time learning-rate schedule: lr / (1 + decay * completed_updates).
pub fn inverse_time_lr(lr: f64, decay: f64, completed_updates: u64) -> f64 {
    lr / (1.0 + decay * completed_updates as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_but_decays_moments() {
        let mut p = [1.0f64];
        let mut m = [0.5f64];
        let mut v = [0.25f64];
        adam_update_group(&mut p, &[0.0], &mut m, &mut v, &AdamHyper::default(), 1e-3, 1);
        // moments decay toward zero, parameter moves only by the decayed
        // momentum contribution
        assert!(m[0] < 0.5 && v[0] < 0.25);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // bias-corrected m_hat/sqrt(v_hat) = 1 at t = 1 for any g != 0
        let mut p = [0.0f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        adam_update_group(&mut p, &[1.0], &mut m, &mut v, &AdamHyper::default(), 1e-3, 1);
        assert!((p[0] + 1e-3).abs() < 1e-6, "step {}", p[0]);
    }

    #[test]
    fn schedule_starts_at_base_rate() {
        assert_eq!(inverse_time_lr(1e-3, 0.1, 0), 1e-3);
        assert!((inverse_time_lr(1e-3, 0.1, 10) - 1e-3 / 2.0).abs() < 1e-12);
    }
}
