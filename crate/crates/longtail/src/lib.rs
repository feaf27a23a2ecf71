//! Long-tailed image classification pipeline: Macenko stain normalization,
//! decoupled two-stage training with class-balanced rebalancing, and
//! test-time-augmentation ensembling.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! - [`stain`] — optical-density conversion, stain-matrix estimation and
//!   normalization against a reference template
//! - [`dataio`] — manifests, image preprocessing, key-value config files
//! - [`sampling`] — instance-balanced and inverse-frequency sampling plans
//! - [`losses`] — effective-number class weights and the hybrid
//!   cross-entropy/focal objective with analytic gradients
//! - [`model`] — a small MLP backbone plus linear classifier with exact
//!   backpropagation
//! - [`trainer`] — the two-stage training loop (representation learning,
//!   then frozen-backbone classifier retraining)
//! - [`inference`] — fixed TTA views and multi-model probability averaging
//! - [`metrics`] — confusion matrices and macro/balanced metrics
//! - [`synth`] — deterministic synthetic data generators used as test oracles
//!
//! Everything is seeded and single-threaded by default: identical seeds
//! produce bit-identical checkpoints, predictions and reports.

pub mod checkpoint;
pub mod dataio;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod rng;
pub mod sampling;
pub mod stain;
pub mod synth;
pub mod trainer;

mod error;

pub use error::{Error, Result};
