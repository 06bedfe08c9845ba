//! Dense linear algebra, MLP forward/backward passes, losses and optimizers.

pub mod matrix;
pub mod mlp;
pub mod optim;

pub use matrix::{argmax, Matrix};
pub use mlp::{
    accuracy, clamped_ln, cross_entropy, sigmoid, softmax_backward, softmax_in_place,
    ForwardCache, Gradients, MlpModel, OutputActivation, LOG_CLAMP,
};
pub use optim::{OptimizerKind, OptimizerState};
