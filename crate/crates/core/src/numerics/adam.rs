use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Adam hyperparameters and moment buffers (one pair per parameter tensor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.tensor(id).len()]).collect();
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay,
            epsilon: 1e-8,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update with a decoupled weight-decay term:
/// `p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
///
/// Gradient buffers are read, not cleared. Parameters without a buffer are
/// treated as having zero gradient.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::invalid("adam_step", "state does not match parameter set"));
    }
    state.step = state
        .step
        .checked_add(1)
        .ok_or_else(|| Error::invalid("adam_step", "step counter overflow"))?;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let tensor = params.tensor_mut(id);
        let grad = tensor.grad.take();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let data = tensor.data_mut();
        for j in 0..data.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[j]);
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            data[j] -= state.lr * (m_hat / (v_hat.sqrt() + state.epsilon) + state.weight_decay * data[j]);
        }
        tensor.grad = grad;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    fn store_with(value: f64, grad: Option<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.register("x", Tensor::new(vec![1], vec![value]).unwrap()).unwrap();
        if let Some(g) = grad {
            s.tensor_mut(id).accumulate_grad(&[g]);
        }
        s
    }

    #[test]
    fn zero_grad_without_decay_leaves_params() {
        let mut s = store_with(0.7, Some(0.0));
        let mut st = AdamState::new(&s, 0.1, 0.0);
        adam_step(&mut s, &mut st).unwrap();
        assert_eq!(s.tensor(s.id("x").unwrap()).data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let mut s = store_with(1.0, Some(1.0));
        let mut st = AdamState::new(&s, 0.1, 0.0);
        adam_step(&mut s, &mut st).unwrap();
        let after = s.tensor(s.id("x").unwrap()).data()[0];
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((after - expected).abs() < 1e-15);
        assert!((1.0 - after - 0.1).abs() < 1e-8);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn grads_are_left_in_place() {
        let mut s = store_with(1.0, Some(2.0));
        let mut st = AdamState::new(&s, 0.1, 0.0);
        adam_step(&mut s, &mut st).unwrap();
        assert_eq!(s.tensor(s.id("x").unwrap()).grad.as_deref(), Some(&[2.0][..]));
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mut a = store_with(0.3, Some(-0.4));
        let mut b = store_with(0.3, Some(-0.4));
        let mut sa = AdamState::new(&a, 0.01, 1e-6);
        let mut sb = AdamState::new(&b, 0.01, 1e-6);
        for _ in 0..5 {
            adam_step(&mut a, &mut sa).unwrap();
            adam_step(&mut b, &mut sb).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut s = store_with(2.0, None);
        let mut st = AdamState::new(&s, 0.5, 0.1);
        adam_step(&mut s, &mut st).unwrap();
        assert!((s.tensor(s.id("x").unwrap()).data()[0] - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-15);
    }
}
