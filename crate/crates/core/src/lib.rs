//! Equiangular simplex classifier weights, the weights-biased softmax
//! (W-Softmax) loss, and a small MLP trainer with experiment sweeps.
//!
//! Everything numeric is `f64`. Matrices are dense and row-major; the
//! classifier matrix is M×C with one column per class.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiments;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod simplex;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use loss::{
    bias_weights, softmax_ce_loss, softmax_probs, wsoftmax_loss, wsoftmax_loss_batch, wsoftmax_probs, GradientFlow,
    LinearClassifier, LossGrad, WSoftmaxConfig,
};
pub use model::{init_params, Activation, MlpSpec, ModelParams};
pub use simplex::{build_simplex, min_feature_dim, verify_equiangular, SimplexWeights};
pub use tensor::{Matrix, Vector};
pub use trainer::{fit, lr_at, TrainConfig, TrainRun};
