//! Minimal neural-network substrate: dense `f64` tensors, layers with
//! hand-written backward passes, losses, momentum SGD, class-balanced
//! sampling, gradient checking and the checkpoint container.

pub mod attention;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod lstm;
pub mod optim;
pub mod param;
pub mod sampler;
pub mod tensor;

pub use attention::SelfAttention;
pub use checkpoint::Checkpoint;
pub use conv::{BatchNorm2d, Conv2d};
pub use gradcheck::{grad_check, Differentiable, GradCheckConfig, GradCheckReport};
pub use layers::{softmax, Dropout, Linear, Relu};
pub use loss::{cross_entropy, kl_divergence};
pub use lstm::{BiLstm, Lstm};
pub use optim::{sgd_step, Sgd};
pub use param::{Param, Parameters};
pub use sampler::{oversample_indices, OversampleStream};
pub use tensor::Tensor;
