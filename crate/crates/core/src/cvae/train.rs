use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::ModelGradients;
use super::model::{CvaeModel, FeatureScaling};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, EarlyStopState, Matrix, StopVerdict};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Fit per-feature standardization on the training set before training.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 64,
            max_epochs: 500,
            patience: 10,
            seed: 0,
            standardize: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: CvaeModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

const EVAL_CHUNK: usize = 1024;

fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn mean_loss(model: &CvaeModel, x: &Matrix, k: &Matrix, noise: &Matrix) -> Result<f64> {
    let mut sum = 0.0;
    let mut start = 0;
    while start < x.rows() {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(x.rows())).collect();
        let parts = model.batch_losses_std(
            &x.select_rows(&idx),
            &k.select_rows(&idx),
            &noise.select_rows(&idx),
        )?;
        sum += parts.iter().map(|p| p.total).sum::<f64>();
        start += EVAL_CHUNK;
    }
    Ok(sum / x.rows() as f64)
}

/// Minibatch Adam on the mean loss with one latent draw per sample, stopped
/// early on validation loss. Deterministic for a given `config.seed`.
pub fn train(
    mut model: CvaeModel,
    train_set: &Dataset,
    valid_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if config.max_epochs == 0 {
        return Ok(TrainOutcome {
            model,
            history: Vec::new(),
            best_epoch: None,
            stopped_early: false,
        });
    }
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    for ds in [train_set, valid_set] {
        model.check_xk(ds.x_dim(), ds.k_dim())?;
    }

    let train_x = train_set.x_matrix();
    let train_k = train_set.k_matrix();
    if config.standardize {
        model.scaling = FeatureScaling::fit(&train_x, &train_k);
    }
    model.seed = config.seed;
    let train_x = model.scaling.apply_x_matrix(&train_x);
    let train_k = model.scaling.apply_k_matrix(&train_k);
    let valid_x = model.scaling.apply_x_matrix(&valid_set.x_matrix());
    let valid_k = model.scaling.apply_k_matrix(&valid_set.k_matrix());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = model.latent_dim();
    // fixed across epochs so the validation curve only moves with the parameters
    let valid_noise = standard_normal_matrix(valid_x.rows(), d, &mut rng);

    let mut adam = AdamState::for_buffers(config.adam, &model.buffers());
    let mut grads = ModelGradients::zeros_like(&model);
    let mut early = EarlyStopState::new(config.patience);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_x.rows()).collect();
    let mut stopped_early = false;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = train_x.select_rows(batch);
            let kb = train_k.select_rows(batch);
            let noise = standard_normal_matrix(batch.len(), d, &mut rng);
            grads.fill_zero();
            let parts = match model.batch_gradients_std(&xb, &kb, &noise, &mut grads) {
                Ok(p) => p,
                Err(Error::Numeric(what)) => {
                    return Err(Error::Diverged {
                        epoch,
                        reason: format!("non-finite {what}"),
                    })
                }
                Err(e) => return Err(e),
            };
            loss_sum += parts.total * batch.len() as f64;
            adam.step(&mut model.buffers_mut(), &grads.buffers())?;
        }
        let train_loss = loss_sum / train_x.rows() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("training loss is {train_loss}"),
            });
        }
        let valid_loss = match mean_loss(&model, &valid_x, &valid_k, &valid_noise) {
            Ok(v) => v,
            Err(Error::Numeric(what)) => {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("non-finite {what}"),
                })
            }
            Err(e) => return Err(e),
        };
        log::debug!("epoch {epoch}: train {train_loss:.5} valid {valid_loss:.5}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
        });
        if early.update(valid_loss, || model.clone())? == StopVerdict::Stop {
            stopped_early = true;
            break;
        }
    }

    let best_epoch = early.best_epoch();
    let model = early.into_best().unwrap_or(model);
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        stopped_early,
    })
}
