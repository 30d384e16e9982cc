//! Heterogeneous POI/CBG graph learning for visitor-origin prediction.
//!
//! The crate covers the whole pipeline: tabular inputs are turned into a
//! typed graph bundle, a relation-aware graph network is trained with a
//! masked KL objective, and predictions are scored with ranking and
//! calibration metrics next to two baselines.

pub mod ablation;
pub mod archive;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod features;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod training;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
