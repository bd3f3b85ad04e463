//! Differentiable building blocks with explicit forward and backward passes.
//!
//! Every kernel is a pure function of its inputs and parameters; state that
//! changes during training (batch-norm running statistics, optimiser
//! velocity) is updated by explicit calls.

pub mod attention;
pub mod batchnorm;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod norm;
pub mod optim;

pub use attention::{
    attention_pool, attention_pool_backward, AttentionScorer, Pooled, ScorerGrads,
};
pub use batchnorm::{BatchMoments, BatchNormCache, BatchNormGrads, BatchNormLayer};
pub use dense::{DenseGrads, DenseLayer};
pub use dropout::{dropout_forward, DropoutMask};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use loss::{mse_grad, mse_loss};
pub use matrix::Matrix;
pub use norm::{l2_normalize, l2_normalize_backward, NORM_EPSILON};
pub use optim::SgdMomentum;

use serde::{Deserialize, Serialize};

/// Train mode uses batch statistics and samples dropout masks; infer mode is
/// deterministic and never mutates state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}
