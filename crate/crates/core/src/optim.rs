//! Adam with coupled L2 weight decay.

use crate::error::TensorError;
use crate::tensor::Tensor;

/// Optimizer state for a fixed parameter list: per-parameter moment
/// buffers plus the shared step counter and hyper-parameters. Weight decay
/// is folded into the gradient (coupled L2), matching an optimizer driven
/// through a `weight_decay` argument rather than the decoupled variant.
pub struct Adam {
    params: Vec<Tensor>,
    first_moment: Vec<Vec<f32>>,
    second_moment: Vec<Vec<f32>>,
    step_count: u64,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub weight_decay: f32,
}

impl Adam {
    /// Defaults: beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(params: Vec<Tensor>, learning_rate: f32, weight_decay: f32) -> Self {
        let first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let second = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam {
            params,
            first_moment: first,
            second_moment: second,
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step_count
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// One update over every parameter. Requires populated gradients.
    pub fn step(&mut self) -> Result<(), TensorError> {
        for p in &self.params {
            if p.grad().is_none() {
                return Err(TensorError::MissingGrad);
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (i, p) in self.params.iter().enumerate() {
            let grad = p.grad().expect("checked above");
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let mut data = p.data_mut();
            for j in 0..data.len() {
                let g = grad[j] + self.weight_decay * data[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                data[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.clear_grad();
        }
    }
}
