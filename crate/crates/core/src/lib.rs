//! Skill classification from raw fNIRS recordings.
//!
//! The crate covers the whole path from raw light intensities to evaluated
//! classifiers:
//!
//! * [`data`]: montages, trial recordings, manifests and exclusion rules.
//! * [`preprocess`]: optical density, zero-phase band-pass, motion correction,
//!   modified Beer-Lambert conversion, downsampling and normalisation.
//! * [`synth`]: a forward model that generates labelled raw trials with known
//!   ground truth.
//! * [`nn`]: the differentiable kernels (causal convolution, squeeze-excitation,
//!   masked pooling and losses) and the Adam optimiser with a cyclical rate.
//! * [`model`]: the convolutional encoder-decoder and the frozen-encoder classifier.
//! * [`train`]: masked self-supervised pretraining and classifier training.
//! * [`eval`]: metrics, curves, cross-validation and paired comparisons.
//! * [`config`] and [`pipeline`]: the run configuration and the end-to-end runs
//!   built on the modules above.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod seeds;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use ndarray;
