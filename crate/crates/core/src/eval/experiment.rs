use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cvae::{train, CvaeModel, ModelConfig, TrainConfig};
use crate::data::{Dataset, Variant};
use crate::error::{Error, Result};
use crate::eval::roc::{roc_auc, RocResult};
use crate::metrics::{score_dataset, AnomalyScore, ScoringConfig};
use crate::seed;
use crate::synth::{self, CausalStructure};
use crate::trigger::{self, TriggerGraph, TriggerParams};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub n: usize,
    pub m: usize,
    pub o: usize,
    pub epsilon_sigma: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n: 100,
            m: 5,
            o: 5,
            epsilon_sigma: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub repeats: usize,
    pub train_size: usize,
    pub valid_size: usize,
    /// Samples in each of the four test sets.
    pub test_size: usize,
    /// Architecture shared by both models; `conditional` is set per model.
    pub model: ModelConfig,
    /// Training settings; `seed` is replaced per repeat.
    pub train: TrainConfig,
    pub scoring: ScoringConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            repeats: 5,
            train_size: 20_000,
            valid_size: 4_000,
            test_size: 2_000,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            scoring: ScoringConfig::default(),
        }
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.train_size == 0 || self.valid_size == 0 || self.test_size == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cvae,
    Vae,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cvae => "cvae",
            ModelKind::Vae => "vae",
        }
    }

    fn conditional(self) -> bool {
        self == ModelKind::Cvae
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// Type A score, inliers against single-feature anomalies.
    TypeA,
    /// Type B score, scattered shifts against cluster shifts.
    TypeB,
}

impl Problem {
    pub fn as_str(self) -> &'static str {
        match self {
            Problem::TypeA => "type_a",
            Problem::TypeB => "type_b",
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sensitivity at small false-positive rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowFallout {
    pub tpr_at_fpr_0_01: f64,
    pub tpr_at_fpr_0_05: f64,
    pub tpr_at_fpr_0_1: f64,
    pub partial_auc_0_1: f64,
}

impl LowFallout {
    fn from_roc(roc: &RocResult) -> Self {
        Self {
            tpr_at_fpr_0_01: roc.tpr_at(0.01),
            tpr_at_fpr_0_05: roc.tpr_at(0.05),
            tpr_at_fpr_0_1: roc.tpr_at(0.1),
            partial_auc_0_1: roc.partial_auc(0.1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub repeat: usize,
    pub seed: u64,
    pub model: ModelKind,
    pub problem: Problem,
    pub auc: f64,
    pub positive_count: usize,
    pub negative_count: usize,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_valid_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low_fallout: Option<LowFallout>,
    /// ROC points; kept out of the report and written separately on request.
    #[serde(skip)]
    pub roc: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub model: ModelKind,
    pub problem: Problem,
    pub mean_auc: f64,
    /// Sample variance across repeats (0 for a single repeat).
    pub variance_auc: f64,
    pub min_auc: f64,
    pub max_auc: f64,
    pub repeats: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_low_fallout: Option<LowFallout>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    /// `synthetic` or `trigger`.
    pub experiment: String,
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<TriggerParams>,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRecord>,
}

impl ExperimentReport {
    pub fn summary_for(&self, model: ModelKind, problem: Problem) -> Option<&SummaryRecord> {
        self.summary
            .iter()
            .find(|s| s.model == model && s.problem == problem)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Consistency(format!("report serialization: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            file: "<input>".into(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported report schema version {}",
                report.schema_version
            )));
        }
        Ok(report)
    }
}

struct Splits {
    train: Dataset,
    valid: Dataset,
    inlier: Dataset,
    type_a: Dataset,
    type_b_inlier: Dataset,
    type_b_anomaly: Dataset,
}

pub fn run_synthetic_experiment(
    config: &ExperimentConfig,
    params: &SyntheticParams,
) -> Result<ExperimentReport> {
    config.validate()?;
    let master = config.master_seed;
    let structure = CausalStructure::generate(
        params.n,
        params.m,
        params.o,
        params.epsilon_sigma,
        seed::derive(master, "structure"),
    )?;
    let draw = |label: &str, count: usize| synth::generate(&structure, count, seed::derive(master, label));
    let corrupt = |base: &str, variant: Variant| -> Result<Dataset> {
        let clean = draw(base, config.test_size)?;
        synth::inject(&structure, &clean, variant, seed::derive(master, &format!("{base}/inject")))
    };
    let splits = Splits {
        train: draw("data/train", config.train_size)?,
        valid: draw("data/valid", config.valid_size)?,
        inlier: draw("data/test/inlier", config.test_size)?,
        type_a: corrupt("data/test/type_a_anomaly", Variant::TypeAAnomaly)?,
        type_b_inlier: corrupt("data/test/type_b_inlier", Variant::TypeBInlier)?,
        type_b_anomaly: corrupt("data/test/type_b_anomaly", Variant::TypeBAnomaly)?,
    };
    let runs = run_repeats(config, &splits, false)?;
    Ok(assemble("synthetic", config, Some(params.clone()), None, runs))
}

pub fn run_trigger_experiment(
    config: &ExperimentConfig,
    params: &TriggerParams,
) -> Result<ExperimentReport> {
    config.validate()?;
    let master = config.master_seed;
    let graph = TriggerGraph::generate(params.clone(), seed::derive(master, "graph"))?;
    let draw = |label: &str, count: usize| trigger::simulate(&graph, count, seed::derive(master, label));
    let corrupt = |base: &str, variant: Variant| -> Result<Dataset> {
        let clean = draw(base, config.test_size)?;
        trigger::inject_rate_anomaly(&graph, &clean, variant, seed::derive(master, &format!("{base}/inject")))
    };
    let splits = Splits {
        train: draw("data/train", config.train_size)?,
        valid: draw("data/valid", config.valid_size)?,
        inlier: draw("data/test/inlier", config.test_size)?,
        type_a: corrupt("data/test/type_a_anomaly", Variant::TypeAAnomaly)?,
        type_b_inlier: corrupt("data/test/type_b_inlier", Variant::TypeBInlier)?,
        type_b_anomaly: corrupt("data/test/type_b_anomaly", Variant::TypeBAnomaly)?,
    };
    let runs = run_repeats(config, &splits, true)?;
    Ok(assemble("trigger", config, None, Some(params.clone()), runs))
}

fn run_repeats(config: &ExperimentConfig, splits: &Splits, low_fallout: bool) -> Result<Vec<RunRecord>> {
    let x_dim = splits.train.x_dim();
    let k_dim = splits.train.k_dim();
    let mut runs = Vec::new();
    for repeat in 0..config.repeats {
        let run_seed = seed::derive(config.master_seed, &format!("repeat/{repeat}"));
        for kind in [ModelKind::Cvae, ModelKind::Vae] {
            let model_cfg = ModelConfig {
                conditional: kind.conditional(),
                ..config.model.clone()
            };
            let init = seed::derive(run_seed, &format!("{kind}/init"));
            let model = CvaeModel::new(x_dim, k_dim, &model_cfg, init)?;
            let train_cfg = TrainConfig {
                seed: seed::derive(run_seed, &format!("{kind}/train")),
                ..config.train.clone()
            };
            let outcome = train(model, &splits.train, &splits.valid, &train_cfg)?;
            let best_valid_loss = outcome
                .history
                .iter()
                .map(|r| r.valid_loss)
                .fold(f64::INFINITY, f64::min);
            log::info!(
                "repeat {repeat} {kind}: {} epochs, best epoch {:?}, best valid loss {best_valid_loss:.4}",
                outcome.history.len(),
                outcome.best_epoch
            );
            let score = |ds: &Dataset, label: &str| {
                score_dataset(
                    &outcome.model,
                    ds,
                    &config.scoring,
                    seed::derive(run_seed, &format!("{kind}/score/{label}")),
                )
            };
            let inlier = score(&splits.inlier, "inlier")?;
            let type_a = score(&splits.type_a, "type_a_anomaly")?;
            let b_inlier = score(&splits.type_b_inlier, "type_b_inlier")?;
            let b_anomaly = score(&splits.type_b_anomaly, "type_b_anomaly")?;
            for (problem, neg, pos) in [
                (Problem::TypeA, &inlier, &type_a),
                (Problem::TypeB, &b_inlier, &b_anomaly),
            ] {
                let roc = problem_roc(problem, neg, pos)?;
                log::info!("repeat {repeat} {kind} {problem}: auc {:.4}", roc.auc);
                runs.push(RunRecord {
                    repeat,
                    seed: run_seed,
                    model: kind,
                    problem,
                    auc: roc.auc,
                    positive_count: roc.positive_count,
                    negative_count: roc.negative_count,
                    epochs: outcome.history.len(),
                    best_epoch: outcome.best_epoch,
                    best_valid_loss,
                    low_fallout: low_fallout.then(|| LowFallout::from_roc(&roc)),
                    roc: roc.points,
                });
            }
        }
    }
    Ok(runs)
}

fn problem_roc(problem: Problem, negatives: &[AnomalyScore], positives: &[AnomalyScore]) -> Result<RocResult> {
    let pick = |s: &AnomalyScore| match problem {
        Problem::TypeA => s.type_a,
        Problem::TypeB => s.type_b,
    };
    let mut labels = vec![false; negatives.len()];
    labels.resize(negatives.len() + positives.len(), true);
    let scores: Vec<f64> = negatives.iter().chain(positives).map(pick).collect();
    roc_auc(&labels, &scores)
}

fn assemble(
    experiment: &str,
    config: &ExperimentConfig,
    synthetic: Option<SyntheticParams>,
    trigger: Option<TriggerParams>,
    runs: Vec<RunRecord>,
) -> ExperimentReport {
    let mut summary = Vec::new();
    for model in [ModelKind::Cvae, ModelKind::Vae] {
        for problem in [Problem::TypeA, Problem::TypeB] {
            let group: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.model == model && r.problem == problem)
                .collect();
            let aucs: Vec<f64> = group.iter().map(|r| r.auc).collect();
            let mean_low_fallout = if group.iter().all(|r| r.low_fallout.is_some()) {
                let lf: Vec<LowFallout> = group.iter().filter_map(|r| r.low_fallout).collect();
                let avg = |f: fn(&LowFallout) -> f64| mean(&lf.iter().map(f).collect::<Vec<_>>());
                Some(LowFallout {
                    tpr_at_fpr_0_01: avg(|l| l.tpr_at_fpr_0_01),
                    tpr_at_fpr_0_05: avg(|l| l.tpr_at_fpr_0_05),
                    tpr_at_fpr_0_1: avg(|l| l.tpr_at_fpr_0_1),
                    partial_auc_0_1: avg(|l| l.partial_auc_0_1),
                })
            } else {
                None
            };
            summary.push(SummaryRecord {
                model,
                problem,
                mean_auc: mean(&aucs),
                variance_auc: sample_variance(&aucs),
                min_auc: aucs.iter().copied().fold(f64::INFINITY, f64::min),
                max_auc: aucs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                repeats: aucs.len(),
                mean_low_fallout,
            });
        }
    }
    ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        experiment: experiment.to_string(),
        config: config.clone(),
        synthetic,
        trigger,
        runs,
        summary,
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}
