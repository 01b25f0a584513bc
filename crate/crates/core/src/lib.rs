//! Trojan detection for small convolutional networks by systematic filter pruning.
//!
//! The pipeline has three stages:
//!
//! 1. **Quality assurance** ([`qa`]): compare a model file's size and abstract
//!    graph fingerprint against per-architecture reference data.
//! 2. **Signal measurement** ([`signal`]): rank convolutional filters, prune
//!    `|S|` variants of the model ([`pruning`]) and record each variant's
//!    accuracy on `|D|` clean images.
//! 3. **Classification** ([`detector`]): map the accuracy vector to a
//!    probability of poisoning with a fitted linear regression, choosing the
//!    pruning configuration by a two-stage, time-constrained search.
//!
//! [`forge`] produces labelled corpora of clean and poisoned toy models to fit
//! and evaluate the detector on. [`nn`] and [`tensor`] provide the small CNN
//! runtime, [`store`] the `PRNT` model file format.

pub mod cli;
pub mod config;
pub mod detector;
pub mod error;
pub mod fingerprint;
pub mod forge;
pub mod model;
pub mod nn;
pub mod pruning;
pub mod qa;
pub mod rng;
pub mod signal;
pub mod store;
pub mod tensor;

pub use error::{Error, Result};
pub use model::Model;
pub use pruning::{PruneMethod, PruningConfig, RankMethod, SampleMethod};
pub use tensor::Tensor;
