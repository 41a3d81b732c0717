//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments for every parameter, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    fn check_shapes(&self, params: &ParamStore) -> Result<()> {
        if self.first_moment.len() != params.len() || self.second_moment.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: state tracks {} parameters, store has {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        for (i, (_, t)) in params.iter().enumerate() {
            if self.first_moment[i].len() != t.len() || self.second_moment[i].len() != t.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: t.shape().to_vec(),
                    rhs: vec![self.first_moment[i].len()],
                });
            }
        }
        Ok(())
    }
}

/// Applies one Adam update in place.
///
/// `grads[i]` is the gradient for the i-th parameter of `params`. Any
/// non-finite gradient aborts the step before anything is modified.
pub fn adam_step(params: &mut ParamStore, grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    state.check_shapes(params)?;
    if grads.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (id, g) in params.ids().zip(grads) {
        let t = params.get(id);
        if g.len() != t.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: t.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "adam: gradient of `{}` element {pos} is {}",
                params.name(id),
                g[pos]
            )));
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);

    let ids: Vec<_> = params.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let current = params.get(id);
        let shape = current.shape().to_vec();
        let mut values = current.to_vec();
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for (((p, g), m), v) in values.iter_mut().zip(&grads[i]).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        params.set(id, Tensor::from_parts(shape, values))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamId;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(&[values.len(), 1], values.to_vec()).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut params = store(&[1.0, -2.0]);
        let mut state = AdamState::new(&params, AdamConfig::default());
        adam_step(&mut params, &[vec![0.0, 0.0]], &mut state).unwrap();
        assert_eq!(params.get(ParamId(0)).data(), &[1.0, -2.0]);
        assert_eq!(state.first_moment[0], vec![0.0, 0.0]);

        adam_step(&mut params, &[vec![0.5, -0.5]], &mut state).unwrap();
        let m_before = state.first_moment[0].clone();
        let v_before = state.second_moment[0].clone();
        adam_step(&mut params, &[vec![0.0, 0.0]], &mut state).unwrap();
        for (a, b) in state.first_moment[0].iter().zip(&m_before) {
            assert_eq!(*a, 0.9 * b);
        }
        for (a, b) in state.second_moment[0].iter().zip(&v_before) {
            assert_eq!(*a, 0.999 * b);
        }
        assert_eq!(state.step, 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = store(&[0.0, 0.0, 0.0]);
        let config = AdamConfig::default();
        let mut state = AdamState::new(&params, config);
        adam_step(&mut params, &[vec![3.0, -0.01, 250.0]], &mut state).unwrap();
        let w = params.get(ParamId(0)).data();
        assert!((w[0] + config.learning_rate).abs() < 1e-10);
        assert!((w[1] - config.learning_rate).abs() < 1e-8);
        assert!((w[2] + config.learning_rate).abs() < 1e-10);
    }

    #[test]
    fn nan_gradient_rejected_without_update() {
        let mut params = store(&[1.0, 2.0]);
        let mut state = AdamState::new(&params, AdamConfig::default());
        let err = adam_step(&mut params, &[vec![0.1, f64::NAN]], &mut state);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(params.get(ParamId(0)).data(), &[1.0, 2.0]);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn quadratic_moves_toward_minimum() {
        let mut params = store(&[0.0]);
        let mut state = AdamState::new(&params, AdamConfig::default());
        for _ in 0..100 {
            let w = params.get(ParamId(0)).data()[0];
            adam_step(&mut params, &[vec![2.0 * (w - 3.0)]], &mut state).unwrap();
        }
        assert!((params.get(ParamId(0)).data()[0] - 3.0).abs() < 3.0);

        let mut params = store(&[0.0]);
        let mut state = AdamState::new(
            &params,
            AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            },
        );
        for _ in 0..100 {
            let w = params.get(ParamId(0)).data()[0];
            adam_step(&mut params, &[vec![2.0 * (w - 3.0)]], &mut state).unwrap();
        }
        let w = params.get(ParamId(0)).data()[0];
        assert!((w - 3.0).abs() < 1.0, "w = {w}");
        assert_eq!(state.step, 100);
    }
}
