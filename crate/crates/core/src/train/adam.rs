//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::TrainError;

/// Optimizer constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
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

/// First and second moments plus the number of updates taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    let n = params.len();
    for got in [grads.len(), state.m.len(), state.v.len()] {
        if got != n {
            return Err(TrainError::ShapeMismatch { expected: n, got });
        }
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState { m: vec![0.5, -0.5], v: vec![0.25, 0.25], t: 3 };
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert!(s.m[0] < 0.5 && s.v[0] < 0.25);
        // The moments still carry momentum, so only a zero state is a fixed point.
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[3.0, -0.01, 1e3], &mut s, 1e-3, &AdamConfig::default()).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-9);
        assert!((p[1] - 1e-3).abs() < 1e-6);
        assert!((p[2] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2);
        let err = adam_step(&mut [0.0; 2], &[0.0; 3], &mut s, 1e-3, &AdamConfig::default());
        assert!(matches!(err, Err(TrainError::ShapeMismatch { expected: 2, got: 3 })));
    }
}
