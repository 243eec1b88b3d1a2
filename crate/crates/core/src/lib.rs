//! Date-fruit sorting pipeline core.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`synthcrop`]: seeded generator for labelled fruit samples and a drifting
//!   conveyor stream.
//! - [`preprocess`]: resize, 0–1 normalisation, Gaussian smoothing and
//!   dark/white spectral calibration.
//! - [`features`]: segmentation, shape moments, colour statistics, entropy,
//!   Daubechies-4 wavelet energies, spectral chemistry regression and the
//!   46-slot fused feature vector.
//! - [`neuralmodel`]: a small CNN with variety, spoilage and shelf-life heads,
//!   trained with SGD + momentum and evaluated by stratified k-fold CV.
//! - [`evolver`]: genetic search over hyperparameters and feature masks.
//! - [`adaptor`]: tabular Q-learning controller for runtime drift.
//! - [`evalmetrics`]: confusion matrices, per-class metrics, ROC/PR curves.
//! - [`pipeline`]: glue that turns a [`synthcrop::FruitSample`] into model
//!   inputs and bundles a trained model with its preprocessing state.

pub mod adaptor;
pub mod error;
pub mod evalmetrics;
pub mod evolver;
pub mod features;
pub mod neuralmodel;
pub mod pipeline;
pub mod preprocess;
pub mod seed;
pub mod synthcrop;

pub use error::{Error, Result};
