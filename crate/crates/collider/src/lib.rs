//! Robust classifier training on backdoor-poisoned data.
//!
//! The pipeline poisons a labeled image dataset with a trigger, then trains a
//! small feed-forward classifier while selecting, at the start of every epoch,
//! a per-class coreset of the most centrally located samples in gradient
//! space. After a warm-up phase the selection is regularized by each sample's
//! local intrinsic dimensionality (LID), and the highest-LID samples are
//! progressively eliminated for good, so the trained model never fits the
//! trigger.
//!
//! Modules map onto the pipeline stages:
//! - [`data`]: synthetic dataset generation, IDX ingestion, stratified splits
//! - [`poison`]: trigger installation and injection policies
//! - [`model`]: MLP with manual forward/backward, gradient proxies, mixup
//! - [`lid`]: LID maximum-likelihood estimation and moving-average tracking
//! - [`coreset`]: facility-location submodular maximization (lazy greedy)
//! - [`trainer`]: the per-epoch selection/elimination/SGD loop
//! - [`metrics`]: clean accuracy, attack success rate, filter rate
//! - [`config`] / [`experiment`]: experiment configs, CSV emission, sweeps

pub mod config;
pub mod coreset;
pub mod data;
pub mod error;
pub mod experiment;
pub mod lid;
pub mod metrics;
pub mod model;
pub mod poison;
pub mod trainer;

pub use error::ColliderError;
