//! Small dense/convolutional network stack with exact backpropagation,
//! cost-sensitive losses and an SGD optimizer.

mod gradcheck;
mod layers;
mod loss;
mod optim;
mod scalar;
mod tensor;

pub use gradcheck::{compare_gradients, grad_check, network_gradient, network_loss, relative_error, GradCheckReport};
pub use layers::{
    convnet4, convnet4_output_len, max_pool2, max_pool2_backward, relu, relu_backward, Cache, Conv2d, Dense, Layer,
    Sequential,
};
pub use loss::{
    check_lambda, class_weights_from_counts, mean_weighted_cross_entropy, multitask_loss, softmax,
    softmax_cross_entropy, weighted_cross_entropy, LossConfig, LOG_EPS, N_CLASSES,
};
pub use optim::{Sgd, StepDecay};
pub use scalar::Scalar;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("forward cache does not match layer")]
    CacheMismatch,
    #[error("prediction is not a probability distribution: {0:?}")]
    NotADistribution(Vec<f64>),
    #[error("gold label {gold} out of range for {classes} classes")]
    Label { gold: usize, classes: usize },
    #[error("lambda {0} outside [0, 1]")]
    Lambda(f64),
    #[error("class weight {0} must be positive and finite")]
    ClassWeight(f64),
    #[error("class counts are all zero")]
    EmptyCounts,
    #[error("invalid optimizer settings: lr {lr}, momentum {momentum}")]
    Optimizer { lr: f64, momentum: f64 },
    #[error("optimizer state does not match parameter layout")]
    OptimizerState,
}

/// An ordered collection of parameter tensors.
pub trait ParamSet<T> {
    fn tensors(&self) -> Vec<&Tensor<T>>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;
}

impl<T: Scalar> ParamSet<T> for Sequential<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        self.params()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params_mut()
    }
}
