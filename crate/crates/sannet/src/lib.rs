//! Semi-adversarial convolutional autoencoder for gender privacy.
//!
//! The generator perturbs a grayscale face image so that gender classifiers
//! are confounded while face matchers keep working. Three subnetworks are
//! involved: a prototype-conditioned convolutional autoencoder (the trainable
//! generator), an auxiliary CNN gender classifier, and an auxiliary face
//! matcher; the auxiliaries provide loss feedback and are frozen during the
//! adversarial phase. Evaluation uses independently trained networks plus a
//! verification-ROC harness.
//!
//! Crate layout:
//!
//! - [`nn`] — tensors, autodiff graph, layer primitives, Adam, weight files
//! - [`data`] — dataset loading, the synthetic face-like generator, splits
//! - [`prototypes`] — gender prototype images and their selection rules
//! - [`models`] — the three subnetworks and the evaluation variants
//! - [`losses`] — reconstruction, gender-confusion and matching losses
//! - [`training`] — the three training phases and checkpointing
//! - [`evaluate`] — gender error rates, match ROC curves, report emission
//! - [`pipeline`] — file-based end-to-end orchestration used by the CLI

pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod losses;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod prototypes;
pub mod training;

pub use config::Config;
pub use error::{Error, Result};
