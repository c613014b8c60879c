use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, MlpParams};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// `ln(sqrt(2π))`
pub(crate) const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden widths, shared by encoder and decoder.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub conditional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            latent_dim: 8,
            conditional: true,
        }
    }
}

/// Per-feature affine standardization `(v - mean) / scale` for `x` and `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScaling {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub k_mean: Vec<f64>,
    pub k_scale: Vec<f64>,
}

impl FeatureScaling {
    pub fn identity(x_dim: usize, k_dim: usize) -> Self {
        Self {
            x_mean: vec![0.0; x_dim],
            x_scale: vec![1.0; x_dim],
            k_mean: vec![0.0; k_dim],
            k_scale: vec![1.0; k_dim],
        }
    }

    /// Mean and population standard deviation of every column; constant
    /// columns get scale 1.
    pub fn fit(x: &Matrix, k: &Matrix) -> Self {
        let (x_mean, x_scale) = column_stats(x);
        let (k_mean, k_scale) = column_stats(k);
        Self {
            x_mean,
            x_scale,
            k_mean,
            k_scale,
        }
    }

    pub fn apply_x(&self, x: &[f64]) -> Vec<f64> {
        apply(x, &self.x_mean, &self.x_scale)
    }

    pub fn apply_k(&self, k: &[f64]) -> Vec<f64> {
        apply(k, &self.k_mean, &self.k_scale)
    }

    pub fn apply_x_matrix(&self, x: &Matrix) -> Matrix {
        apply_matrix(x, &self.x_mean, &self.x_scale)
    }

    pub fn apply_k_matrix(&self, k: &Matrix) -> Matrix {
        apply_matrix(k, &self.k_mean, &self.k_scale)
    }
}

fn column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows().max(1) as f64;
    let mut mean = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (acc, v) in mean.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for ((acc, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    let scale = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn apply(v: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(mean.iter().zip(scale))
        .map(|(x, (m, s))| (x - m) / s)
        .collect()
}

fn apply_matrix(m: &Matrix, mean: &[f64], scale: &[f64]) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        for ((x, mu), s) in out.row_mut(r).iter_mut().zip(mean).zip(scale) {
            *x = (*x - mu) / s;
        }
    }
    out
}

/// Diagonal Gaussian `q(z | x, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Diagonal Gaussian `p(x | z, k)` in standardized feature units.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedDistribution {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvaeModel {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub scaling: FeatureScaling,
    x_dim: usize,
    k_dim: usize,
    latent_dim: usize,
    conditional: bool,
    /// Seed that produced the initial weights (or the last training run).
    pub seed: u64,
}

#[inline]
pub(crate) fn clamp_log_var(v: f64) -> f64 {
    v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
}

impl CvaeModel {
    pub fn new(x_dim: usize, k_dim: usize, config: &ModelConfig, seed: u64) -> Result<Self> {
        if x_dim == 0 || config.latent_dim == 0 {
            return Err(Error::Config("x_dim and latent_dim must be positive".into()));
        }
        if config.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cond = if config.conditional { k_dim } else { 0 };
        let encoder = MlpParams::glorot(x_dim + cond, &config.hidden, 2 * config.latent_dim, &mut rng);
        let decoder = MlpParams::glorot(config.latent_dim + cond, &config.hidden, 2 * x_dim, &mut rng);
        Ok(Self {
            encoder,
            decoder,
            scaling: FeatureScaling::identity(x_dim, k_dim),
            x_dim,
            k_dim,
            latent_dim: config.latent_dim,
            conditional: config.conditional,
            seed,
        })
    }

    /// Assembles a model from its parts, checking every width invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        encoder: MlpParams,
        decoder: MlpParams,
        scaling: FeatureScaling,
        x_dim: usize,
        k_dim: usize,
        latent_dim: usize,
        conditional: bool,
        seed: u64,
    ) -> Result<Self> {
        let cond = if conditional { k_dim } else { 0 };
        let checks = [
            ("encoder input", x_dim + cond, encoder.input_dim()),
            ("encoder output", 2 * latent_dim, encoder.output_dim()),
            ("decoder input", latent_dim + cond, decoder.input_dim()),
            ("decoder output", 2 * x_dim, decoder.output_dim()),
            ("x scaling", x_dim, scaling.x_mean.len()),
            ("x scaling", x_dim, scaling.x_scale.len()),
            ("k scaling", k_dim, scaling.k_mean.len()),
            ("k scaling", k_dim, scaling.k_scale.len()),
        ];
        for (field, expected, actual) in checks {
            if expected != actual {
                return Err(Error::dim(field, expected, actual));
            }
        }
        if latent_dim == 0 || x_dim == 0 {
            return Err(Error::Config("x_dim and latent_dim must be positive".into()));
        }
        Ok(Self {
            encoder,
            decoder,
            scaling,
            x_dim,
            k_dim,
            latent_dim,
            conditional,
            seed,
        })
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn k_dim(&self) -> usize {
        self.k_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn is_conditional(&self) -> bool {
        self.conditional
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.encoder.layers()[..self.encoder.layers().len() - 1]
                .iter()
                .map(|l| l.output_dim())
                .collect(),
            latent_dim: self.latent_dim,
            conditional: self.conditional,
        }
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    /// Encoder then decoder buffers.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut b = self.encoder.buffers();
        b.extend(self.decoder.buffers());
        b
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b = self.encoder.buffers_mut();
        b.extend(self.decoder.buffers_mut());
        b
    }

    pub(crate) fn check_xk(&self, x: usize, k: usize) -> Result<()> {
        if x != self.x_dim {
            return Err(Error::dim("x", self.x_dim, x));
        }
        if k != self.k_dim {
            return Err(Error::dim("k", self.k_dim, k));
        }
        Ok(())
    }

    /// Encoder input rows from already standardized `x` and `k`.
    pub(crate) fn encoder_input(&self, x_std: &Matrix, k_std: &Matrix) -> Result<Matrix> {
        if self.conditional {
            x_std.hstack(k_std)
        } else {
            Ok(x_std.clone())
        }
    }

    pub(crate) fn decoder_input(&self, z: &Matrix, k_std: &Matrix) -> Result<Matrix> {
        if self.conditional {
            z.hstack(k_std)
        } else {
            Ok(z.clone())
        }
    }

    /// Posterior parameters for standardized batches: `(mu, log_var)`, each
    /// `batch x latent_dim`, log-variance already clamped.
    pub(crate) fn encode_std(&self, x_std: &Matrix, k_std: &Matrix) -> Result<(Matrix, Matrix)> {
        let out = self.encoder.predict_batch(&self.encoder_input(x_std, k_std)?)?;
        let d = self.latent_dim;
        let mu = out.columns(0, d);
        let mut lv = out.columns(d, d);
        lv.as_mut_slice().iter_mut().for_each(|v| *v = clamp_log_var(*v));
        if !mu.is_finite() || !lv.is_finite() {
            return Err(Error::Numeric("encoder output".into()));
        }
        Ok((mu, lv))
    }

    /// Decoder means and clamped log-variances for latent batch `z`.
    pub(crate) fn decode_std(&self, z: &Matrix, k_std: &Matrix) -> Result<(Matrix, Matrix)> {
        let out = self.decoder.predict_batch(&self.decoder_input(z, k_std)?)?;
        let n = self.x_dim;
        let mu = out.columns(0, n);
        let mut lv = out.columns(n, n);
        lv.as_mut_slice().iter_mut().for_each(|v| *v = clamp_log_var(*v));
        if !mu.is_finite() || !lv.is_finite() {
            return Err(Error::Numeric("decoder output".into()));
        }
        Ok((mu, lv))
    }

    /// `q(z | x, k)` for raw (unstandardized) `x` and `k`.
    pub fn encode(&self, x: &[f64], k: &[f64]) -> Result<LatentPosterior> {
        self.check_xk(x.len(), k.len())?;
        let xs = Matrix::from_vec(1, self.x_dim, self.scaling.apply_x(x))?;
        let ks = Matrix::from_vec(1, self.k_dim, self.scaling.apply_k(k))?;
        let (mu, lv) = self.encode_std(&xs, &ks)?;
        Ok(LatentPosterior {
            mu: mu.into_vec(),
            sigma: lv.as_slice().iter().map(|v| (0.5 * v).exp()).collect(),
        })
    }

    /// `p(x | z, k)` for a latent `z` and raw `k`, in standardized units.
    pub fn decode(&self, z: &[f64], k: &[f64]) -> Result<DecodedDistribution> {
        if z.len() != self.latent_dim {
            return Err(Error::dim("z", self.latent_dim, z.len()));
        }
        if k.len() != self.k_dim {
            return Err(Error::dim("k", self.k_dim, k.len()));
        }
        let zs = Matrix::from_vec(1, self.latent_dim, z.to_vec())?;
        let ks = Matrix::from_vec(1, self.k_dim, self.scaling.apply_k(k))?;
        let (mu, lv) = self.decode_std(&zs, &ks)?;
        Ok(DecodedDistribution {
            mu: mu.into_vec(),
            sigma: lv.as_slice().iter().map(|v| (0.5 * v).exp()).collect(),
        })
    }
}

/// `z = mu + sigma * noise`.
pub fn reparameterize(posterior: &LatentPosterior, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != posterior.mu.len() {
        return Err(Error::dim("latent noise", posterior.mu.len(), noise.len()));
    }
    Ok(posterior
        .mu
        .iter()
        .zip(&posterior.sigma)
        .zip(noise)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

/// Per-feature Gaussian negative log-likelihood
/// `(x_i - mu_i)^2 / (2 sigma_i^2) + ln(sqrt(2π) sigma_i)`.
pub fn gaussian_nll_terms(x: &[f64], decoded: &DecodedDistribution) -> Result<Vec<f64>> {
    if x.len() != decoded.mu.len() || x.len() != decoded.sigma.len() {
        return Err(Error::dim("decoded distribution", x.len(), decoded.mu.len()));
    }
    x.iter()
        .zip(decoded.mu.iter().zip(&decoded.sigma))
        .map(|(x, (mu, s))| {
            if !(*s > 0.0) {
                return Err(Error::Numeric(format!("sigma must be positive, got {s}")));
            }
            let r = x - mu;
            Ok(r * r / (2.0 * s * s) + HALF_LN_TWO_PI + s.ln())
        })
        .collect()
}

pub fn gaussian_nll(x: &[f64], decoded: &DecodedDistribution) -> Result<f64> {
    Ok(gaussian_nll_terms(x, decoded)?.iter().sum())
}

/// Closed-form `KL(N(mu, diag sigma^2) || N(0, I))`.
pub fn kl_to_standard_normal(posterior: &LatentPosterior) -> f64 {
    0.5 * posterior
        .mu
        .iter()
        .zip(&posterior.sigma)
        .map(|(m, s)| {
            let var = s * s;
            m * m + var - 1.0 - var.ln()
        })
        .sum::<f64>()
}
