//! Per-sample anomaly scores.
//!
//! - Type A: `max_i mean_l (x_i - mu_i^(l))^2 / sigma_i^(l)` over `L` latent
//!   draws, catching a large deviation on a single feature.
//! - Type B: the closed-form posterior KL to `N(0, I)`, divided by the latent
//!   width, catching small coherent deviations.
//!
//! The two are never combined into one number; a sample is anomalous when
//! either exceeds its threshold.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cvae::CvaeModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::seed;

/// Denominator of the Type A residual term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualNorm {
    /// `(x - mu)^2 / sigma`
    #[default]
    Sigma,
    /// `(x - mu)^2 / sigma^2`
    Variance,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Average each feature's term over draws, then take the max.
    #[default]
    MeanThenMax,
    /// Take the max per draw, then average the maxima.
    MaxThenMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub draws: usize,
    pub norm: ResidualNorm,
    pub aggregation: Aggregation,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            draws: 30,
            norm: ResidualNorm::Sigma,
            aggregation: Aggregation::MeanThenMax,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyScore {
    pub type_a: f64,
    pub type_b: f64,
    /// Per-feature Type A terms averaged over draws. With
    /// [`Aggregation::MeanThenMax`], `type_a` is their maximum.
    pub per_feature_a: Vec<f64>,
    pub sample_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggeredBy {
    TypeA,
    TypeB,
    Both,
    None,
}

impl TriggeredBy {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggeredBy::TypeA => "type_a",
            TriggeredBy::TypeB => "type_b",
            TriggeredBy::Both => "both",
            TriggeredBy::None => "none",
        }
    }
}

impl fmt::Display for TriggeredBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TriggeredBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "type_a" => Ok(TriggeredBy::TypeA),
            "type_b" => Ok(TriggeredBy::TypeB),
            "both" => Ok(TriggeredBy::Both),
            "none" => Ok(TriggeredBy::None),
            other => Err(format!("unknown trigger {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub is_anomalous: bool,
    pub triggered_by: TriggeredBy,
    pub tau_a: f64,
    pub tau_b: f64,
}

/// Logical OR of the two threshold comparisons.
pub fn decide(score: &AnomalyScore, tau_a: f64, tau_b: f64) -> Verdict {
    let a = score.type_a > tau_a;
    let b = score.type_b > tau_b;
    let triggered_by = match (a, b) {
        (true, true) => TriggeredBy::Both,
        (true, false) => TriggeredBy::TypeA,
        (false, true) => TriggeredBy::TypeB,
        (false, false) => TriggeredBy::None,
    };
    Verdict {
        is_anomalous: a || b,
        triggered_by,
        tau_a,
        tau_b,
    }
}

/// One residual term.
#[inline]
fn residual_term(x: f64, mu: f64, log_var: f64, norm: ResidualNorm) -> f64 {
    let r = x - mu;
    match norm {
        ResidualNorm::Sigma => r * r * (-0.5 * log_var).exp(),
        ResidualNorm::Variance => r * r * (-log_var).exp(),
    }
}

fn kl_per_dim(mu: &[f64], log_var: &[f64]) -> f64 {
    let kl: f64 = mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
        * 0.5;
    kl / mu.len() as f64
}

/// Scores a standardized batch. `noise[l]` is the `batch x latent_dim`
/// latent noise of draw `l`.
fn score_batch_std(
    model: &CvaeModel,
    x_std: &Matrix,
    k_std: &Matrix,
    noise: &[Matrix],
    config: &ScoringConfig,
) -> Result<Vec<AnomalyScore>> {
    if noise.is_empty() {
        return Err(Error::Config("at least one latent draw is required".into()));
    }
    let batch = x_std.rows();
    let n = model.x_dim();
    let draws = noise.len();
    let (mu_z, lv_z) = model.encode_std(x_std, k_std)?;
    let mut mean_terms = Matrix::zeros(batch, n);
    let mut max_sum = vec![0.0; batch];
    let mut z = Matrix::zeros(batch, model.latent_dim());
    for eps in noise {
        for r in 0..batch {
            for (j, zi) in z.row_mut(r).iter_mut().enumerate() {
                *zi = mu_z[(r, j)] + (0.5 * lv_z[(r, j)]).exp() * eps[(r, j)];
            }
        }
        let (mu_x, lv_x) = model.decode_std(&z, k_std)?;
        for r in 0..batch {
            let mut draw_max = f64::NEG_INFINITY;
            let acc = mean_terms.row_mut(r);
            for i in 0..n {
                let t = residual_term(x_std[(r, i)], mu_x[(r, i)], lv_x[(r, i)], config.norm);
                acc[i] += t / draws as f64;
                draw_max = draw_max.max(t);
            }
            max_sum[r] += draw_max / draws as f64;
        }
    }
    (0..batch)
        .map(|r| {
            let per_feature_a = mean_terms.row(r).to_vec();
            let type_a = match config.aggregation {
                Aggregation::MeanThenMax => per_feature_a.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Aggregation::MaxThenMean => max_sum[r],
            };
            let type_b = kl_per_dim(mu_z.row(r), lv_z.row(r));
            if !type_a.is_finite() || !type_b.is_finite() {
                return Err(Error::Numeric(format!("anomaly score of sample {r}")));
            }
            Ok(AnomalyScore {
                type_a,
                type_b,
                per_feature_a,
                sample_count: draws,
            })
        })
        .collect()
}

fn single(model: &CvaeModel, x: &[f64], k: &[f64]) -> Result<(Matrix, Matrix)> {
    if x.len() != model.x_dim() {
        return Err(Error::dim("x", model.x_dim(), x.len()));
    }
    if k.len() != model.k_dim() {
        return Err(Error::dim("k", model.k_dim(), k.len()));
    }
    Ok((
        Matrix::from_vec(1, x.len(), model.scaling.apply_x(x))?,
        Matrix::from_vec(1, k.len(), model.scaling.apply_k(k))?,
    ))
}

fn draw_noise<R: Rng + ?Sized>(rng: &mut R, draws: usize, d: usize) -> Vec<Vec<f64>> {
    (0..draws)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Type A score with caller-supplied latent noise, one vector per draw.
pub fn score_type_a_with_noise(
    model: &CvaeModel,
    x: &[f64],
    k: &[f64],
    noise: &[Vec<f64>],
    config: &ScoringConfig,
) -> Result<(f64, Vec<f64>)> {
    let (xs, ks) = single(model, x, k)?;
    let mats = noise
        .iter()
        .map(|e| {
            if e.len() != model.latent_dim() {
                return Err(Error::dim("latent noise", model.latent_dim(), e.len()));
            }
            Matrix::from_vec(1, e.len(), e.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let s = score_batch_std(model, &xs, &ks, &mats, config)?.remove(0);
    Ok((s.type_a, s.per_feature_a))
}

/// Type A score with `config.draws` latent draws from `rng`.
pub fn score_type_a<R: Rng + ?Sized>(
    model: &CvaeModel,
    x: &[f64],
    k: &[f64],
    config: &ScoringConfig,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    let noise = draw_noise(rng, config.draws, model.latent_dim());
    score_type_a_with_noise(model, x, k, &noise, config)
}

/// Type B score; deterministic in `(model, x, k)`.
pub fn score_type_b(model: &CvaeModel, x: &[f64], k: &[f64]) -> Result<f64> {
    let (xs, ks) = single(model, x, k)?;
    let (mu, lv) = model.encode_std(&xs, &ks)?;
    Ok(kl_per_dim(mu.row(0), lv.row(0)))
}

/// Both scores for one sample.
pub fn score<R: Rng + ?Sized>(
    model: &CvaeModel,
    x: &[f64],
    k: &[f64],
    config: &ScoringConfig,
    rng: &mut R,
) -> Result<AnomalyScore> {
    let (xs, ks) = single(model, x, k)?;
    let noise = draw_noise(rng, config.draws, model.latent_dim());
    let mats = noise
        .into_iter()
        .map(|e| Matrix::from_vec(1, e.len(), e))
        .collect::<Result<Vec<_>>>()?;
    Ok(score_batch_std(model, &xs, &ks, &mats, config)?.remove(0))
}

const SCORE_CHUNK: usize = 256;

/// Scores every sample of a dataset. Sample `i` draws its latent noise from
/// the stream `derive(seed, "score/{i}")`, so its score equals
/// [`score`] with that stream, independent of batching.
pub fn score_dataset(
    model: &CvaeModel,
    dataset: &Dataset,
    config: &ScoringConfig,
    seed: u64,
) -> Result<Vec<AnomalyScore>> {
    if dataset.x_dim() != model.x_dim() {
        return Err(Error::dim("dataset x", model.x_dim(), dataset.x_dim()));
    }
    if dataset.k_dim() != model.k_dim() {
        return Err(Error::dim("dataset k", model.k_dim(), dataset.k_dim()));
    }
    if config.draws == 0 {
        return Err(Error::Config("at least one latent draw is required".into()));
    }
    let x_std = model.scaling.apply_x_matrix(&dataset.x_matrix());
    let k_std = model.scaling.apply_k_matrix(&dataset.k_matrix());
    let d = model.latent_dim();
    let mut out = Vec::with_capacity(dataset.len());
    let mut start = 0;
    while start < dataset.len() {
        let idx: Vec<usize> = (start..(start + SCORE_CHUNK).min(dataset.len())).collect();
        let mut noise = vec![Matrix::zeros(idx.len(), d); config.draws];
        for (r, &i) in idx.iter().enumerate() {
            let mut rng = seed::rng(sample_seed(seed, i));
            for draw in noise.iter_mut() {
                for v in draw.row_mut(r) {
                    *v = StandardNormal.sample(&mut rng);
                }
            }
        }
        out.extend(score_batch_std(
            model,
            &x_std.select_rows(&idx),
            &k_std.select_rows(&idx),
            &noise,
            config,
        )?);
        start += SCORE_CHUNK;
    }
    Ok(out)
}

pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed::derive(seed, &format!("score/{index}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau_a: f64,
    pub tau_b: f64,
    pub degenerate_a: bool,
    pub degenerate_b: bool,
}

/// Empirical `(1 - target_fpr)` quantile.
///
/// With the scores sorted ascending as `s[0..N]`, the threshold is
/// `s[min(N - floor(target_fpr * N), N - 1)]`, so at most
/// `floor(target_fpr * N)` validation scores lie strictly above it. The flag
/// reports a constant distribution, in which case the threshold is its value.
pub fn quantile_threshold(values: &[f64], target_fpr: f64) -> Result<(f64, bool)> {
    if values.is_empty() {
        return Err(Error::Config("cannot calibrate on an empty score set".into()));
    }
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::Config(format!("target_fpr {target_fpr} outside (0, 1)")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("calibration scores".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let above = ((target_fpr * n as f64) + 1e-9).floor() as usize;
    let idx = n.saturating_sub(above).min(n - 1);
    let degenerate = sorted[0] == sorted[n - 1];
    if degenerate {
        log::warn!("constant score distribution; threshold set to its maximum");
        return Ok((sorted[n - 1], true));
    }
    Ok((sorted[idx], false))
}

pub fn calibrate_thresholds(scores: &[AnomalyScore], target_fpr: f64) -> Result<Thresholds> {
    let a: Vec<f64> = scores.iter().map(|s| s.type_a).collect();
    let b: Vec<f64> = scores.iter().map(|s| s.type_b).collect();
    let (tau_a, degenerate_a) = quantile_threshold(&a, target_fpr)?;
    let (tau_b, degenerate_b) = quantile_threshold(&b, target_fpr)?;
    Ok(Thresholds {
        tau_a,
        tau_b,
        degenerate_a,
        degenerate_b,
    })
}

/// One row of a score file: `sample_id,type_a,type_b,verdict,triggered_by`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub sample_id: String,
    pub type_a: f64,
    pub type_b: f64,
    pub is_anomalous: bool,
    pub triggered_by: TriggeredBy,
}

impl ScoreRow {
    pub fn new(sample_id: impl Into<String>, score: &AnomalyScore, verdict: &Verdict) -> Self {
        Self {
            sample_id: sample_id.into(),
            type_a: score.type_a,
            type_b: score.type_b,
            is_anomalous: verdict.is_anomalous,
            triggered_by: verdict.triggered_by,
        }
    }
}

pub const SCORE_HEADER: [&str; 5] = ["sample_id", "type_a", "type_b", "verdict", "triggered_by"];

pub fn write_scores<W: Write>(out: W, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(SCORE_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.sample_id.clone(),
            r.type_a.to_string(),
            r.type_b.to_string(),
            if r.is_anomalous { "anomalous" } else { "normal" }.to_string(),
            r.triggered_by.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores<R: Read>(input: R) -> Result<Vec<ScoreRow>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| Error::parse(1, "empty score file"))?
        .map_err(|e| Error::parse(1, e.to_string()))?;
    if header.iter().map(str::trim).ne(SCORE_HEADER) {
        return Err(Error::parse(1, format!("score header must be {}", SCORE_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            Error::parse(e.position().map_or(0, |p| p.line() as usize), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 5 {
            return Err(Error::parse(line, format!("expected 5 fields, found {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = rec[i]
                .trim()
                .parse()
                .map_err(|_| Error::parse(line, format!("bad number {:?}", &rec[i])))?;
            if v.is_nan() {
                return Err(Error::parse(line, "NaN score"));
            }
            Ok(v)
        };
        let is_anomalous = match rec[3].trim() {
            "anomalous" => true,
            "normal" => false,
            other => return Err(Error::parse(line, format!("bad verdict {other:?}"))),
        };
        rows.push(ScoreRow {
            sample_id: rec[0].trim().to_string(),
            type_a: num(1)?,
            type_b: num(2)?,
            is_anomalous,
            triggered_by: rec[4].trim().parse().map_err(|e: String| Error::parse(line, e))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn score_of(a: f64, b: f64) -> AnomalyScore {
        AnomalyScore {
            type_a: a,
            type_b: b,
            per_feature_a: vec![a],
            sample_count: 1,
        }
    }

    fn model() -> CvaeModel {
        CvaeModel::new(
            4,
            2,
            &ModelConfig {
                hidden: vec![8],
                latent_dim: 2,
                conditional: true,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn decide_truth_table() {
        let cases = [
            (0.0, 0.0, false, TriggeredBy::None),
            (2.0, 0.0, true, TriggeredBy::TypeA),
            (0.0, 2.0, true, TriggeredBy::TypeB),
            (2.0, 2.0, true, TriggeredBy::Both),
        ];
        for (a, b, anomalous, by) in cases {
            let v = decide(&score_of(a, b), 1.0, 1.0);
            assert_eq!(v.is_anomalous, anomalous);
            assert_eq!(v.triggered_by, by);
        }
        // comparisons are strict
        assert!(!decide(&score_of(1.0, 1.0), 1.0, 1.0).is_anomalous);
    }

    #[test]
    fn perfect_reconstruction_scores_zero() {
        let mut m = model();
        m.decoder.zero_output_layer();
        let (a, per) = score_type_a(&m, &[0.0; 4], &[0.3, 0.1], &ScoringConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(a, 0.0);
        assert_eq!(per, vec![0.0; 4]);
    }

    #[test]
    fn injected_noise_is_reproducible() {
        let m = model();
        let cfg = ScoringConfig {
            draws: 1,
            ..Default::default()
        };
        let x = [0.5, -0.2, 1.0, 0.0];
        let k = [1.0, -1.0];
        let a = score_type_a_with_noise(&m, &x, &k, &[vec![0.0, 0.0]], &cfg).unwrap();
        let b = score_type_a_with_noise(&m, &x, &k, &[vec![0.0, 0.0]], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0, a.1.iter().copied().fold(f64::MIN, f64::max));
    }

    #[test]
    fn type_b_reference_values() {
        assert_eq!(kl_per_dim(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((kl_per_dim(&[1.0, 0.0], &[0.0, 0.0]) - 0.25).abs() < 1e-15);
        let mut m = model();
        m.encoder.zero_output_layer();
        assert_eq!(score_type_b(&m, &[1.0, 2.0, 3.0, 4.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn dataset_scoring_matches_single_sample_path() {
        let m = model();
        let samples: Vec<_> = (0..5)
            .map(|i| crate::data::Sample::new(vec![i as f64 * 0.1; 4], vec![0.5, -(i as f64)]))
            .collect();
        let ds = Dataset::new(crate::data::Naming::Synthetic, 4, 2, samples).unwrap();
        let cfg = ScoringConfig {
            draws: 3,
            ..Default::default()
        };
        let batch = score_dataset(&m, &ds, &cfg, 42).unwrap();
        for (i, s) in ds.samples().iter().enumerate() {
            let mut rng = seed::rng(sample_seed(42, i));
            let one = score(&m, &s.x, &s.k, &cfg, &mut rng).unwrap();
            assert!((one.type_a - batch[i].type_a).abs() < 1e-12);
            assert_eq!(one.type_b, batch[i].type_b);
        }
    }

    #[test]
    fn quantile_rule_on_one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile_threshold(&v, 0.05).unwrap(), (96.0, false));
        assert_eq!(quantile_threshold(&v, 1e-6).unwrap(), (100.0, false));
        assert_eq!(quantile_threshold(&v, 0.5).unwrap().0, 51.0);
    }

    #[test]
    fn constant_scores_are_flagged() {
        assert_eq!(quantile_threshold(&[2.5; 10], 0.1).unwrap(), (2.5, true));
        assert!(quantile_threshold(&[], 0.1).is_err());
        assert!(quantile_threshold(&[1.0], 0.0).is_err());
        assert!(quantile_threshold(&[1.0], 1.0).is_err());
    }

    #[test]
    fn score_file_round_trip() {
        let rows = vec![
            ScoreRow::new("0", &score_of(0.25, 1e-9), &decide(&score_of(0.25, 1e-9), 1.0, 1.0)),
            ScoreRow::new("s1", &score_of(3.0, 2.0), &decide(&score_of(3.0, 2.0), 1.0, 1.0)),
        ];
        let mut buf = Vec::new();
        write_scores(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sample_id,type_a,type_b,verdict,triggered_by\n"));
        assert!(text.contains("s1,3,2,anomalous,both"));
        assert_eq!(read_scores(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn score_file_errors_name_the_line() {
        let text = "sample_id,type_a,type_b,verdict,triggered_by\n0,1,1,normal,none\n1,x,1,normal,none\n";
        match read_scores(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
