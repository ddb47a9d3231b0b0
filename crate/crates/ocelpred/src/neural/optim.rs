//! Adam optimizer and the backward-then-update step.

use super::NeuralError;
use crate::tensor::{Scalar, Tensor};

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8). Moment
/// state is kept per parameter in registration order.
pub struct Adam<F: Scalar> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<Vec<F>>,
    second_moment: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update from the gradients currently stored on `params`.
    /// A missing gradient counts as zero. Any non-finite gradient aborts the
    /// whole step before touching parameters or moments.
    pub fn step(&mut self, params: &[Tensor<F>]) -> Result<(), NeuralError> {
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
            self.second_moment = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
        }
        assert_eq!(self.first_moment.len(), params.len(), "optimizer state size");

        for p in params {
            if let Some(grad) = p.grad() {
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(NeuralError::NonFiniteGradient);
                }
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let beta1 = F::from_f64(self.beta1);
        let beta2 = F::from_f64(self.beta2);
        let one = F::one();
        let correction1 = F::from_f64(1.0 - self.beta1.powi(t));
        let correction2 = F::from_f64(1.0 - self.beta2.powi(t));
        let lr = F::from_f64(self.learning_rate);
        let eps = F::from_f64(self.epsilon);

        for (i, p) in params.iter().enumerate() {
            let Some(grad) = p.grad() else { continue };
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let mut data = p.to_vec();
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = beta1 * m[j] + (one - beta1) * g;
                v[j] = beta2 * v[j] + (one - beta2) * g * g;
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                data[j] = data[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.set_data(&data);
        }
        Ok(())
    }
}

/// Backpropagate `loss` and apply one optimizer step. Gradients are cleared
/// afterwards either way; on a non-finite gradient the parameters stay
/// untouched and the error is surfaced.
pub fn backward_and_step<F: Scalar>(
    loss: &Tensor<F>,
    params: &[Tensor<F>],
    optimizer: &mut Adam<F>,
) -> Result<(), NeuralError> {
    loss.backward();
    let result = optimizer.step(params);
    for p in params {
        p.zero_grad();
    }
    result
}
