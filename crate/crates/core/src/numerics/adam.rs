use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<(), NumericsError> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(NumericsError::ParamCount {
            params: params.len(),
            grads: grads.len(),
            state: state.first.len(),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g.data()[i];
            let mi = config.beta1 * m.data()[i] + (1.0 - config.beta1) * gi;
            let vi = config.beta2 * v.data()[i] + (1.0 - config.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            p.data_mut()[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut w = Tensor::new(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        let before = w.clone();
        let mut state = AdamState::new(&[&w]);
        for _ in 0..10 {
            adam_step(&mut [&mut w], &[Tensor::zeros(1, 3)], &mut state, &AdamConfig::default())
                .unwrap();
        }
        assert_eq!(w, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut w = Tensor::new(1, 3, vec![0.0, 1.0, -1.0]).unwrap();
        let g = Tensor::new(1, 3, vec![0.5, -3.0, 1e-3]).unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&[&w]);
        adam_step(&mut [&mut w], std::slice::from_ref(&g), &mut state, &cfg).unwrap();
        let expected = [-0.01, 1.01, -1.01];
        for (i, e) in expected.iter().enumerate() {
            // eps/|g| is the only deviation from -lr·sign(g)
            assert!((w.data()[i] - e).abs() < 1e-7, "{} vs {e}", w.data()[i]);
        }
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut w = Tensor::new(1, 4, vec![1.0, -2.0, 0.5, 1.5]).unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&[&w]);
        for _ in 0..500 {
            let g = w.map(|x| 2.0 * x);
            adam_step(&mut [&mut w], &[g], &mut state, &cfg).unwrap();
        }
        assert!(w.l2_norm() < 1e-3, "‖w‖ = {}", w.l2_norm());
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut w = Tensor::zeros(2, 2);
        let mut state = AdamState::new(&[&Tensor::zeros(1, 2)]);
        let err = adam_step(&mut [&mut w], &[Tensor::zeros(2, 2)], &mut state, &AdamConfig::default());
        assert!(matches!(err, Err(NumericsError::ShapeMismatch { .. })));
        let err = adam_step(&mut [&mut w], &[], &mut state, &AdamConfig::default());
        assert!(matches!(err, Err(NumericsError::ParamCount { .. })));
    }
}
