//! Conditional VAE with a learned per-feature output variance.
//!
//! The encoder maps `(x, k)` to a diagonal Gaussian over the latent `z`; the
//! decoder maps `(z, k)` to a diagonal Gaussian over `x`. With
//! `conditional = false` the same machinery is a vanilla VAE that never sees
//! `k`. Both heads emit log-variances clamped to `[-10, 10]`.

mod checkpoint;
mod loss;
mod model;
mod train;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{LossParts, ModelGradients};
pub use model::{
    gaussian_nll, gaussian_nll_terms, kl_to_standard_normal, reparameterize, CvaeModel,
    DecodedDistribution, FeatureScaling, LatentPosterior, ModelConfig, LOG_VAR_MAX, LOG_VAR_MIN,
};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};
