//! Adam with bias correction (Kingma & Ba), applied per parameter tensor.

use serde::{Deserialize, Serialize};

use super::loss::ModelGrads;
use super::{shape_err, ModelError, MtlModel, Trainable};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments for tensors of the given lengths.
    pub fn new(tensor_lens: &[usize], learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step: 0,
            first: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model(model: &MtlModel, learning_rate: f64) -> Self {
        let lens: Vec<usize> = model.tensors().iter().map(|(_, t)| t.len()).collect();
        Self::new(&lens, learning_rate)
    }

    pub fn first_moment(&self, tensor: usize) -> &[f64] {
        &self.first[tensor]
    }

    pub fn second_moment(&self, tensor: usize) -> &[f64] {
        &self.second[tensor]
    }

    /// Advances the step counter; call once before the per-tensor updates of a step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates one tensor in place using the current step's bias correction.
    pub fn update(&mut self, tensor: usize, param: &mut [f64], grad: &[f64]) -> Result<(), ModelError> {
        let (m, v) = (&mut self.first[tensor], &mut self.second[tensor]);
        if param.len() != m.len() || grad.len() != m.len() {
            return Err(shape_err(
                format!("adam tensor {tensor}"),
                m.len(),
                format!("param {} / grad {}", param.len(), grad.len()),
            ));
        }
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for k in 0..param.len() {
            let g = grad[k];
            m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
            v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = m[k] / bias1;
            let v_hat = v[k] / bias2;
            param[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// One optimizer step over every tensor in a group marked trainable.
pub fn adam_step(
    model: &mut MtlModel,
    grads: &ModelGrads,
    state: &mut AdamState,
    trainable: Trainable,
) -> Result<(), ModelError> {
    let grad_tensors = grads.tensors();
    let mut params = model.tensors_mut();
    if params.len() != grad_tensors.len() || params.len() != state.first.len() {
        return Err(shape_err(
            "adam tensor count",
            state.first.len(),
            format!("params {} / grads {}", params.len(), grad_tensors.len()),
        ));
    }
    state.begin_step();
    for (k, ((group, param), grad)) in params.iter_mut().zip(grad_tensors).enumerate() {
        if trainable.includes(*group) {
            state.update(k, param, grad)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelDims};
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut m = init_model(&ModelDims::mnist_mlp(2, vec![3]), 0.1, true, 1).unwrap();
        let before = m.clone();
        let mut state = AdamState::for_model(&m, 1e-3);
        let grads = ModelGrads::zeros_like(&m);
        adam_step(&mut m, &grads, &mut state, Trainable::ALL).unwrap();
        assert_eq!(m, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn scalar_first_step_hand_trace() {
        // m1 = 0.1 g, v1 = 0.001 g^2, m_hat = g, v_hat = g^2
        // => p1 = p0 - lr * g / (|g| + eps)
        let mut s = AdamState::new(&[1], 0.01);
        let mut p = [1.0];
        s.begin_step();
        s.update(0, &mut p, &[0.5]).unwrap();
        assert_relative_eq!(p[0], 1.0 - 0.01 * 0.5 / (0.5 + 1e-8), epsilon = 1e-15);
        assert_relative_eq!(s.first_moment(0)[0], 0.05, epsilon = 1e-15);
        assert_relative_eq!(s.second_moment(0)[0], 0.00025, epsilon = 1e-15);
    }

    #[test]
    fn two_constant_steps_match_recurrence() {
        let (lr, g) = (0.1, -2.0);
        let mut s = AdamState::new(&[1], lr);
        let mut p = [0.3];
        for _ in 0..2 {
            s.begin_step();
            s.update(0, &mut p, &[g]).unwrap();
        }
        // Straight-line recurrences.
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        let mut q = 0.3;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            q -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        assert_eq!(p[0], q);
        assert_relative_eq!(p[0], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn frozen_groups_untouched_and_shapes_checked() {
        let mut m = init_model(&ModelDims::mnist_mlp(2, vec![3]), 0.1, true, 1).unwrap();
        let mut grads = ModelGrads::zeros_like(&m);
        grads.log_var[0].fill(1.0);
        grads.heads[0].bias.fill(1.0);
        let before = m.clone();
        let mut state = AdamState::for_model(&m, 1e-3);
        let only_heads = Trainable {
            encoder: false,
            heads: true,
            log_var: false,
            marginal_log_var: false,
        };
        adam_step(&mut m, &grads, &mut state, only_heads).unwrap();
        assert_eq!(m.filters, before.filters);
        assert_ne!(m.heads, before.heads);

        let mut bad = AdamState::new(&[1, 2], 1e-3);
        assert!(matches!(
            adam_step(&mut m, &grads, &mut bad, Trainable::ALL),
            Err(ModelError::ShapeMismatch { .. })
        ));
        let mut s = AdamState::new(&[2], 1e-3);
        s.begin_step();
        assert!(s.update(0, &mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
