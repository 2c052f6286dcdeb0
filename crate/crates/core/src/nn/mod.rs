//! Differentiable layers, losses and optimizers for fixed layer stacks.

pub mod activation;
pub mod batchnorm;
pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod optim;
pub mod pool;

pub use activation::{relu, softmax, softmax_backward};
pub use batchnorm::BatchNorm1d;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointFile};
pub use conv::Conv1d;
pub use dense::Dense;
pub use gradcheck::{gradcheck, gradcheck_with, GradcheckConfig, GradcheckReport};
pub use loss::{consistency_loss, cross_entropy_soft};
pub use network::{Gradients, Layer, Network, Trace};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use pool::MaxPool1d;
