use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
            config,
        }
    }
}

/// One bias-corrected Adam update using the gradients stored in `params`.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Invariant(format!(
            "optimizer tracks {} parameters, store has {}",
            state.m.len(),
            params.len()
        )));
    }
    for (id, name, t) in params.iter() {
        if t.grad().is_none() {
            return Err(Error::Invariant(format!("parameter {name} has no gradient")));
        }
        if state.m[id.index()].len() != t.numel() {
            return Err(Error::Invariant(format!(
                "optimizer moments for {name} have the wrong size"
            )));
        }
    }
    state.step += 1;
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, tensor) in params.tensors_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let grad = tensor.grad().expect("checked above").to_vec();
        for (j, w) in tensor.values_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr_in_sign_direction() {
        let mut p = store(&[0.5, -0.5, 2.0]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let id = p.id("w").unwrap();
        p.get_mut(id).accumulate_grad(&[3.0, -0.2, 7.0]).unwrap();
        adam_step(&mut p, &mut st, 0.01).unwrap();
        let w = p.get(id).values();
        assert!((w[0] - 0.49).abs() < 1e-8);
        assert!((w[1] + 0.49).abs() < 1e-8);
        assert!((w[2] - 1.99).abs() < 1e-8);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn unit_gradient_from_zero() {
        let mut p = store(&[0.0]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let id = p.id("w").unwrap();
        p.get_mut(id).accumulate_grad(&[1.0]).unwrap();
        adam_step(&mut p, &mut st, 0.1).unwrap();
        assert!((p.get(id).values()[0] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = store(&[1.0, 2.0]);
        let before = p.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        p.zero_grad();
        adam_step(&mut p, &mut st, 0.1).unwrap();
        assert!(p.same_values(&before));
    }

    #[test]
    fn missing_gradient_is_an_invariant_error() {
        let mut p = store(&[1.0]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        assert!(matches!(
            adam_step(&mut p, &mut st, 0.1),
            Err(Error::Invariant(_))
        ));
        assert_eq!(st.step, 0);
    }
}
