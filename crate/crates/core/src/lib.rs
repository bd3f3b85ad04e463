//! Multimodal click-through-rate regression for online video ads.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: hand-written differentiable kernels (dense, batch norm,
//!   dropout, softmax attention pooling, L2 normalisation, MSE), a momentum
//!   SGD optimiser and a finite-difference gradient checker.
//! - [`model`]: the three modality branches, modality fusion and the
//!   regression head, with forward/backward passes and a binary parameter
//!   format.
//! - [`data`]: ad records, filtering, chronological video-grouped splits,
//!   categorical/continuous encoding, embedding files and a synthetic corpus
//!   generator.
//! - [`training`]: the epoch loop with validation-based model selection and
//!   the RMSE / Pearson metrics.
//! - [`analysis`]: attention aggregation, metadata/CTR correlation tables and
//!   the ablation campaign driver.

pub mod analysis;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
