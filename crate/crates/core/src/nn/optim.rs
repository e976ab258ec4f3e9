use serde::{Deserialize, Serialize};

use super::{NnError, Scalar, Tensor};

/// Stochastic gradient descent with classical momentum:
/// `v <- momentum * v + g; p <- p - lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Result<Self, NnError> {
        if !(lr > 0.0 && lr.is_finite()) || !(0.0..1.0).contains(&momentum) {
            return Err(NnError::Optimizer { lr, momentum });
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    /// Applies one update. `params` and `grads` must pair up tensor by tensor
    /// and keep the same order across calls.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: Vec<&Tensor<T>>) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::ShapeMismatch {
                expected: vec![params.len()],
                found: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(&grads) {
            g.expect_shape(p.shape())?;
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        } else if self.velocity.len() != params.len()
            || self.velocity.iter().zip(&params).any(|(v, p)| v.len() != p.len())
        {
            return Err(NnError::OptimizerState);
        }
        let lr = T::from_f64_lossy(self.lr);
        let mu = T::from_f64_lossy(self.momentum);
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *v = mu * *v + g;
                *p = *p - lr * *v;
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` every `every` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

impl StepDecay {
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        if self.every == 0 {
            return base;
        }
        base * self.factor.powi((epoch / self.every) as i32)
    }
}
