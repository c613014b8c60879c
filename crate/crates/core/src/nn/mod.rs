//! Dense-network numerical core: row-major matrices, multilayer
//! perceptrons with hand-written backward passes, the Adam optimizer and an
//! early-stopping monitor.

mod adam;
mod early_stop;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use early_stop::{EarlyStopState, StopVerdict};
pub use matrix::{dot, Matrix};
pub use mlp::{Activation, ForwardCache, Gradients, Layer, LayerGrad, MlpParams};
