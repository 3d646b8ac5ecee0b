//! Cross-view affordance grounding at desk scale.
//!
//! Trains a small two-branch convolutional network on exocentric/egocentric
//! image pairs using only affordance labels, mines interaction-invariant
//! features with non-negative matrix factorization, transfers them to the
//! egocentric view, and grounds affordance heatmaps via class activation
//! mapping. Ships with dataset tooling, heatmap metrics, and a batch CLI.

pub mod error;
pub mod rng;
pub mod aim;
pub mod encoder;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
