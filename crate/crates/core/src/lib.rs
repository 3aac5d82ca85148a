//! Plant-product productivity estimation.
//!
//! The pipeline runs panel ingestion, revenue shares, threshold-filtered
//! input-price instruments, nested-logit demand, marginal-cost recovery,
//! product-level production GMM and downstream outcomes. `synth` draws
//! panels with known parameters for testing.

pub mod cli;
pub mod conduct;
pub mod demand;
pub mod error;
pub mod instruments;
pub mod linalg;
pub mod outcomes;
pub mod panel;
pub mod production;
pub mod shares;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
