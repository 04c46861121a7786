//! Weakly supervised anomaly detection over precomputed per-segment feature
//! vectors.
//!
//! The pipeline consumes one d-dimensional feature vector per 16-frame video
//! segment plus a single binary label per video, and trains a small scorer
//! network whose two fully connected modules are multiplicatively gated by
//! normalcy suppression modules (per-column softmax over the temporal axis of
//! a batch). Training combines a regression loss on the weak labels with a
//! clustering-distance loss, temporal smoothness, and sparsity terms, driven
//! by RMSProp over randomly ordered fixed-size batches. Evaluation expands
//! segment scores to frames and reports pooled ROC/AUC against frame-level
//! annotations.
//!
//! Module map:
//! - [`tensor`] / [`tape`]: dense f64 matrices and exact reverse-mode
//!   gradients for the fixed set of operations the network needs
//! - [`dataset`]: manifests, binary feature files, mean normalization,
//!   batching, the random batch selector, and a synthetic data generator
//! - [`model`]: parameters, forward pass, intermediate representation
//! - [`losses`]: the four loss terms and their weighted combination
//! - [`clustering`]: per-video 2-means with frozen epoch assignments
//! - [`trainer`]: the RMSProp loop, schedule, checkpointing
//! - [`evaluation`]: frame expansion, ROC/AUC with tie handling
//! - [`checkpoint`]: binary parameter + optimizer state serialization

mod binio;

pub mod checkpoint;
pub mod clustering;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
