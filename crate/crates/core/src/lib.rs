//! Hierarchical weather image classification.
//!
//! A coarse model sorts an image into one of three weather groups (Rainy,
//! Dusty, Cold) and a group-specific sub-model then picks one of eleven leaf
//! classes. Cold images additionally go through a two-way safety model; the
//! other groups take their safety level from the taxonomy map.
//!
//! Everything below the hierarchy is built here as well:
//!
//! - [`imageio`]: binary PPM codec and byte image to float tensor conversion.
//! - [`preprocess`]: Lanczos resampling, train-set standardization, one-hot labels.
//! - [`dataset`]: CSV manifests, seeded stratified splits, class distributions.
//! - [`nn`]: an NHWC convolutional network engine with SGD + momentum.
//! - [`hierarchy`] and [`bundle`]: the two-level model and its on-disk layout.
//! - [`eval`]: confusion matrices, precision/recall and comparison tables.
//! - [`synth`]: a seeded procedural dataset used for end-to-end checks.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod hierarchy;
pub mod imageio;
pub mod model_file;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod taxonomy;
pub mod tensor_file;

pub use error::{Error, Result};
pub use imageio::{ImageU8, Tensor, TensorF32};
pub use taxonomy::{CoarseGroup, LeafClass, SafetyLevel, Taxonomy};
