//! Synthetic counties with a known visit-generating process.

pub mod generate;
pub mod toy;
pub mod truth;

pub use generate::{generate, sample_counts, SynthConfig, SynthCounty, SynthTruth};
pub use toy::{random_toy, ToyGraph};
pub use truth::{truth_metrics, NoiseFloor};
