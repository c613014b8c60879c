use super::model::{clamp_log_var, CvaeModel, HALF_LN_TWO_PI, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::error::{Error, Result};
use crate::nn::{Gradients, Matrix};

/// Loss of one sample (or a batch mean): `total = nll + kl`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub nll: f64,
    pub kl: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradients {
    pub encoder: Gradients,
    pub decoder: Gradients,
}

impl ModelGradients {
    pub fn zeros_like(model: &CvaeModel) -> Self {
        Self {
            encoder: Gradients::zeros_like(&model.encoder),
            decoder: Gradients::zeros_like(&model.decoder),
        }
    }

    pub fn fill_zero(&mut self) {
        self.encoder.fill_zero();
        self.decoder.fill_zero();
    }

    /// Same order as [`CvaeModel::buffers`].
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut b = self.encoder.buffers();
        b.extend(self.decoder.buffers());
        b
    }
}

#[inline]
fn inside_clamp(raw: f64) -> bool {
    raw > LOG_VAR_MIN && raw < LOG_VAR_MAX
}

fn sample_terms(
    x: &[f64],
    mu_x: &[f64],
    lv_x: &[f64],
    mu_z: &[f64],
    lv_z: &[f64],
) -> LossParts {
    let mut nll = 0.0;
    for ((x, m), lv) in x.iter().zip(mu_x).zip(lv_x) {
        let r = x - m;
        nll += 0.5 * r * r * (-lv).exp() + HALF_LN_TWO_PI + 0.5 * lv;
    }
    let mut kl = 0.0;
    for (m, lv) in mu_z.iter().zip(lv_z) {
        kl += m * m + lv.exp() - 1.0 - lv;
    }
    kl *= 0.5;
    LossParts {
        total: nll + kl,
        nll,
        kl,
    }
}

impl CvaeModel {
    fn check_noise(&self, rows: usize, noise: &Matrix) -> Result<()> {
        if noise.shape() != (rows, self.latent_dim()) {
            return Err(Error::dim("latent noise", self.latent_dim(), noise.cols()));
        }
        Ok(())
    }

    /// Per-sample losses for standardized batches; no gradients.
    pub(crate) fn batch_losses_std(
        &self,
        x_std: &Matrix,
        k_std: &Matrix,
        noise: &Matrix,
    ) -> Result<Vec<LossParts>> {
        self.check_noise(x_std.rows(), noise)?;
        let (mu_z, lv_z) = self.encode_std(x_std, k_std)?;
        let mut z = mu_z.clone();
        for r in 0..z.rows() {
            for ((zi, lv), e) in z.row_mut(r).iter_mut().zip(lv_z.row(r)).zip(noise.row(r)) {
                *zi += (0.5 * lv).exp() * e;
            }
        }
        let (mu_x, lv_x) = self.decode_std(&z, k_std)?;
        Ok((0..x_std.rows())
            .map(|r| {
                sample_terms(
                    x_std.row(r),
                    mu_x.row(r),
                    lv_x.row(r),
                    mu_z.row(r),
                    lv_z.row(r),
                )
            })
            .collect())
    }

    /// Mean batch loss over standardized inputs; gradients of that mean are
    /// added into `grads`.
    pub(crate) fn batch_gradients_std(
        &self,
        x_std: &Matrix,
        k_std: &Matrix,
        noise: &Matrix,
        grads: &mut ModelGradients,
    ) -> Result<LossParts> {
        let batch = x_std.rows();
        self.check_noise(batch, noise)?;
        if batch == 0 {
            return Ok(LossParts::default());
        }
        let d = self.latent_dim();
        let n = self.x_dim();
        let scale = 1.0 / batch as f64;

        let enc_in = self.encoder_input(x_std, k_std)?;
        let (enc_out, enc_cache) = self.encoder.forward_batch(&enc_in)?;
        let mut mu_z = Matrix::zeros(batch, d);
        let mut lv_z = Matrix::zeros(batch, d);
        let mut sigma_z = Matrix::zeros(batch, d);
        let mut z = Matrix::zeros(batch, d);
        for r in 0..batch {
            let row = enc_out.row(r);
            for j in 0..d {
                let mu = row[j];
                let lv = clamp_log_var(row[d + j]);
                let s = (0.5 * lv).exp();
                mu_z[(r, j)] = mu;
                lv_z[(r, j)] = lv;
                sigma_z[(r, j)] = s;
                z[(r, j)] = mu + s * noise[(r, j)];
            }
        }

        let dec_in = self.decoder_input(&z, k_std)?;
        let (dec_out, dec_cache) = self.decoder.forward_batch(&dec_in)?;

        let mut mean = LossParts::default();
        let mut dec_grad = Matrix::zeros(batch, 2 * n);
        for r in 0..batch {
            let out = dec_out.row(r);
            let x = x_std.row(r);
            let mut lv_x = vec![0.0; n];
            for i in 0..n {
                lv_x[i] = clamp_log_var(out[n + i]);
            }
            let parts = sample_terms(x, &out[..n], &lv_x, mu_z.row(r), lv_z.row(r));
            if !parts.total.is_finite() {
                return Err(Error::Numeric("loss".into()));
            }
            mean.nll += parts.nll * scale;
            mean.kl += parts.kl * scale;

            let g = dec_grad.row_mut(r);
            for i in 0..n {
                let inv_var = (-lv_x[i]).exp();
                let resid = x[i] - out[i];
                g[i] = -resid * inv_var * scale;
                g[n + i] = if inside_clamp(out[n + i]) {
                    (0.5 - 0.5 * resid * resid * inv_var) * scale
                } else {
                    0.0
                };
            }
        }
        mean.total = mean.nll + mean.kl;

        let dec_in_grad = self
            .decoder
            .backward_into(&dec_cache, &dec_grad, &mut grads.decoder)?;

        let mut enc_grad = Matrix::zeros(batch, 2 * d);
        for r in 0..batch {
            let raw = enc_out.row(r);
            let dz = &dec_in_grad.row(r)[..d];
            let g = enc_grad.row_mut(r);
            for j in 0..d {
                g[j] = dz[j] + mu_z[(r, j)] * scale;
                g[d + j] = if inside_clamp(raw[d + j]) {
                    dz[j] * 0.5 * sigma_z[(r, j)] * noise[(r, j)]
                        + 0.5 * (lv_z[(r, j)].exp() - 1.0) * scale
                } else {
                    0.0
                };
            }
        }
        self.encoder
            .backward_into(&enc_cache, &enc_grad, &mut grads.encoder)?;
        Ok(mean)
    }

    /// Loss for one raw sample with injected latent noise.
    pub fn loss(&self, x: &[f64], k: &[f64], noise: &[f64]) -> Result<LossParts> {
        let (xs, ks, es) = self.single_batch(x, k, noise)?;
        let parts = self.batch_losses_std(&xs, &ks, &es)?[0];
        if !parts.total.is_finite() {
            return Err(Error::Diverged {
                epoch: 0,
                reason: "non-finite loss".into(),
            });
        }
        Ok(parts)
    }

    /// Loss and its gradient with respect to every parameter, for one raw sample.
    pub fn loss_and_gradients(
        &self,
        x: &[f64],
        k: &[f64],
        noise: &[f64],
    ) -> Result<(LossParts, ModelGradients)> {
        let (xs, ks, es) = self.single_batch(x, k, noise)?;
        let mut grads = ModelGradients::zeros_like(self);
        let parts = self.batch_gradients_std(&xs, &ks, &es, &mut grads)?;
        Ok((parts, grads))
    }

    /// Mean loss and gradients over a batch of raw samples, one per row.
    pub fn batch_loss_and_gradients(
        &self,
        x: &Matrix,
        k: &Matrix,
        noise: &Matrix,
    ) -> Result<(LossParts, ModelGradients)> {
        self.check_xk(x.cols(), k.cols())?;
        if k.rows() != x.rows() {
            return Err(Error::dim("k rows", x.rows(), k.rows()));
        }
        let xs = self.scaling.apply_x_matrix(x);
        let ks = self.scaling.apply_k_matrix(k);
        let mut grads = ModelGradients::zeros_like(self);
        let parts = self.batch_gradients_std(&xs, &ks, noise, &mut grads)?;
        Ok((parts, grads))
    }

    fn single_batch(&self, x: &[f64], k: &[f64], noise: &[f64]) -> Result<(Matrix, Matrix, Matrix)> {
        self.check_xk(x.len(), k.len())?;
        if noise.len() != self.latent_dim() {
            return Err(Error::dim("latent noise", self.latent_dim(), noise.len()));
        }
        Ok((
            Matrix::from_vec(1, x.len(), self.scaling.apply_x(x))?,
            Matrix::from_vec(1, k.len(), self.scaling.apply_k(k))?,
            Matrix::from_vec(1, noise.len(), noise.to_vec())?,
        ))
    }
}
