//! Persistence-image feature extraction and multi-teacher knowledge
//! distillation for sensor time series.
//!
//! The crate is organized around a small set of building blocks:
//!
//! - [`tda`]: 0-dimensional sublevel-set persistence of 1D signals and
//!   rasterization of persistence diagrams into persistence images.
//! - [`nn`]: a minimal deterministic neural-network engine (forward, manual
//!   backprop, SGD with momentum) for small 1D/2D CNN classifiers.
//! - [`augment`]: mixup sampling, batch mixing, partial mixup, and the
//!   mixup cross-entropy loss.
//! - [`distill`]: temperature-softened distillation losses, single- and
//!   multi-teacher objectives, and the training orchestration.
//! - [`data`]: windowing, CSV ingestion, synthetic dataset generation, and
//!   splits.
//! - [`metrics`] and [`experiment`]: evaluation (accuracy, V-measure,
//!   weight-space interpolation scans) and the experiment runner backing the
//!   `topokd` command-line tool.

pub mod augment;
pub mod data;
pub mod digest;
pub mod distill;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tda;
