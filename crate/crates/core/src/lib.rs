//! Conditional-VAE anomaly detection for hierarchically structured data.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense networks, Adam, early stopping.
//! - [`cvae`]: the conditional VAE with learned output variance, its loss,
//!   training loop and checkpoint format.
//! - [`metrics`]: the two per-sample anomaly scores and the OR decision.
//! - [`synth`]: synthetic data with a known causal structure.
//! - [`trigger`]: simulated hierarchical trigger rates.
//! - [`eval`]: ROC/AUC, the threshold sweep and the reproduction experiments.
//! - [`config`]: the key-value run configuration.

pub mod config;
pub mod cvae;
pub mod data;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod synth;
pub mod trigger;

pub use error::{Error, Result};
