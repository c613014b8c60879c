//! Run configuration in a line-oriented `key = value` format.
//!
//! ```text
//! # comments start with '#'
//! seed = 42
//! structure.n = 100
//! model.hidden = 64,64
//! scoring.tau_a = auto
//! ```
//!
//! Keys are fixed; unknown or repeated keys are errors. Every key has a
//! default, so an empty file is a valid configuration. `Display` writes
//! every key, and the output parses back to an equal value.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::cvae::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{ExperimentConfig, SyntheticParams};
use crate::metrics::{Aggregation, ResidualNorm, ScoringConfig};
use crate::trigger::TriggerParams;

/// Environment variable overriding `paths.out_dir`.
pub const OUT_DIR_ENV: &str = "HCVAE_OUT_DIR";

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Inlier samples written by the data generators.
    pub count: usize,
    /// Samples in each generated test set.
    pub test_size: usize,
    /// Train and validation fractions; the rest is held out.
    pub train_fraction: f64,
    pub valid_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            count: 28_000,
            test_size: 2_000,
            train_fraction: 0.7,
            valid_fraction: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdConfig {
    /// `None` means calibrate from data.
    pub tau_a: Option<f64>,
    pub tau_b: Option<f64>,
    pub target_fpr: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            tau_a: None,
            tau_b: None,
            target_fpr: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub repeats: usize,
    pub train_size: usize,
    pub valid_size: usize,
    pub test_size: usize,
    pub trigger_test_size: usize,
    pub sweep_step: f64,
    pub write_roc: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            repeats: 5,
            train_size: 20_000,
            valid_size: 4_000,
            test_size: 2_000,
            trigger_test_size: 2_800,
            sweep_step: 0.01,
            write_roc: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub structure: SyntheticParams,
    pub trigger: TriggerParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scoring: ScoringConfig,
    pub thresholds: ThresholdConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            structure: SyntheticParams::default(),
            trigger: TriggerParams::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            scoring: ScoringConfig::default(),
            thresholds: ThresholdConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "structure.n",
    "structure.m",
    "structure.o",
    "structure.epsilon_sigma",
    "trigger.l1_count",
    "trigger.hlt_per_l1",
    "trigger.noise_sigma",
    "trigger.rate_scale",
    "trigger.lumi_sigma",
    "trigger.l1_jitter",
    "trigger.group_drift",
    "model.hidden",
    "model.latent_dim",
    "model.conditional",
    "train.learning_rate",
    "train.beta1",
    "train.beta2",
    "train.adam_epsilon",
    "train.batch_size",
    "train.patience",
    "train.max_epochs",
    "train.standardize",
    "scoring.draws",
    "scoring.norm",
    "scoring.aggregation",
    "scoring.tau_a",
    "scoring.tau_b",
    "scoring.target_fpr",
    "data.count",
    "data.test_size",
    "data.train_fraction",
    "data.valid_fraction",
    "eval.repeats",
    "eval.train_size",
    "eval.valid_size",
    "eval.test_size",
    "eval.trigger_test_size",
    "eval.sweep_step",
    "eval.write_roc",
    "paths.out_dir",
];

fn num<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("invalid value {value:?}: {e}"))
}

fn boolean(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {value:?}")),
    }
}

fn optional(value: &str) -> std::result::Result<Option<f64>, String> {
    if value == "auto" {
        Ok(None)
    } else {
        num(value).map(Some)
    }
}

fn show_optional(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |t| t.to_string())
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => self.seed = num(v)?,
            "structure.n" => self.structure.n = num(v)?,
            "structure.m" => self.structure.m = num(v)?,
            "structure.o" => self.structure.o = num(v)?,
            "structure.epsilon_sigma" => self.structure.epsilon_sigma = num(v)?,
            "trigger.l1_count" => self.trigger.l1_count = num(v)?,
            "trigger.hlt_per_l1" => self.trigger.hlt_per_l1 = num(v)?,
            "trigger.noise_sigma" => self.trigger.noise_sigma = num(v)?,
            "trigger.rate_scale" => self.trigger.rate_scale = num(v)?,
            "trigger.lumi_sigma" => self.trigger.lumi_sigma = num(v)?,
            "trigger.l1_jitter" => self.trigger.l1_jitter = num(v)?,
            "trigger.group_drift" => self.trigger.group_drift = num(v)?,
            "model.hidden" => {
                self.model.hidden = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|w| num(w.trim())).collect::<std::result::Result<_, _>>()?
                }
            }
            "model.latent_dim" => self.model.latent_dim = num(v)?,
            "model.conditional" => self.model.conditional = boolean(v)?,
            "train.learning_rate" => self.train.adam.learning_rate = num(v)?,
            "train.beta1" => self.train.adam.beta1 = num(v)?,
            "train.beta2" => self.train.adam.beta2 = num(v)?,
            "train.adam_epsilon" => self.train.adam.epsilon = num(v)?,
            "train.batch_size" => self.train.batch_size = num(v)?,
            "train.patience" => self.train.patience = num(v)?,
            "train.max_epochs" => self.train.max_epochs = num(v)?,
            "train.standardize" => self.train.standardize = boolean(v)?,
            "scoring.draws" => self.scoring.draws = num(v)?,
            "scoring.norm" => {
                self.scoring.norm = match v {
                    "sigma" => ResidualNorm::Sigma,
                    "variance" => ResidualNorm::Variance,
                    _ => return Err(format!("expected sigma or variance, got {v:?}")),
                }
            }
            "scoring.aggregation" => {
                self.scoring.aggregation = match v {
                    "mean_then_max" => Aggregation::MeanThenMax,
                    "max_then_mean" => Aggregation::MaxThenMean,
                    _ => return Err(format!("expected mean_then_max or max_then_mean, got {v:?}")),
                }
            }
            "scoring.tau_a" => self.thresholds.tau_a = optional(v)?,
            "scoring.tau_b" => self.thresholds.tau_b = optional(v)?,
            "scoring.target_fpr" => self.thresholds.target_fpr = num(v)?,
            "data.count" => self.data.count = num(v)?,
            "data.test_size" => self.data.test_size = num(v)?,
            "data.train_fraction" => self.data.train_fraction = num(v)?,
            "data.valid_fraction" => self.data.valid_fraction = num(v)?,
            "eval.repeats" => self.eval.repeats = num(v)?,
            "eval.train_size" => self.eval.train_size = num(v)?,
            "eval.valid_size" => self.eval.valid_size = num(v)?,
            "eval.test_size" => self.eval.test_size = num(v)?,
            "eval.trigger_test_size" => self.eval.trigger_test_size = num(v)?,
            "eval.sweep_step" => self.eval.sweep_step = num(v)?,
            "eval.write_roc" => self.eval.write_roc = boolean(v)?,
            "paths.out_dir" => {
                if v.is_empty() {
                    return Err("paths.out_dir must not be empty".into());
                }
                self.out_dir = PathBuf::from(v)
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "structure.n" => self.structure.n.to_string(),
            "structure.m" => self.structure.m.to_string(),
            "structure.o" => self.structure.o.to_string(),
            "structure.epsilon_sigma" => self.structure.epsilon_sigma.to_string(),
            "trigger.l1_count" => self.trigger.l1_count.to_string(),
            "trigger.hlt_per_l1" => self.trigger.hlt_per_l1.to_string(),
            "trigger.noise_sigma" => self.trigger.noise_sigma.to_string(),
            "trigger.rate_scale" => self.trigger.rate_scale.to_string(),
            "trigger.lumi_sigma" => self.trigger.lumi_sigma.to_string(),
            "trigger.l1_jitter" => self.trigger.l1_jitter.to_string(),
            "trigger.group_drift" => self.trigger.group_drift.to_string(),
            "model.hidden" => self
                .model
                .hidden
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "model.latent_dim" => self.model.latent_dim.to_string(),
            "model.conditional" => self.model.conditional.to_string(),
            "train.learning_rate" => self.train.adam.learning_rate.to_string(),
            "train.beta1" => self.train.adam.beta1.to_string(),
            "train.beta2" => self.train.adam.beta2.to_string(),
            "train.adam_epsilon" => self.train.adam.epsilon.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.patience" => self.train.patience.to_string(),
            "train.max_epochs" => self.train.max_epochs.to_string(),
            "train.standardize" => self.train.standardize.to_string(),
            "scoring.draws" => self.scoring.draws.to_string(),
            "scoring.norm" => match self.scoring.norm {
                ResidualNorm::Sigma => "sigma".into(),
                ResidualNorm::Variance => "variance".into(),
            },
            "scoring.aggregation" => match self.scoring.aggregation {
                Aggregation::MeanThenMax => "mean_then_max".into(),
                Aggregation::MaxThenMean => "max_then_mean".into(),
            },
            "scoring.tau_a" => show_optional(self.thresholds.tau_a),
            "scoring.tau_b" => show_optional(self.thresholds.tau_b),
            "scoring.target_fpr" => self.thresholds.target_fpr.to_string(),
            "data.count" => self.data.count.to_string(),
            "data.test_size" => self.data.test_size.to_string(),
            "data.train_fraction" => self.data.train_fraction.to_string(),
            "data.valid_fraction" => self.data.valid_fraction.to_string(),
            "eval.repeats" => self.eval.repeats.to_string(),
            "eval.train_size" => self.eval.train_size.to_string(),
            "eval.valid_size" => self.eval.valid_size.to_string(),
            "eval.test_size" => self.eval.test_size.to_string(),
            "eval.trigger_test_size" => self.eval.trigger_test_size.to_string(),
            "eval.sweep_step" => self.eval.sweep_step.to_string(),
            "eval.write_roc" => self.eval.write_roc.to_string(),
            "paths.out_dir" => self.out_dir.display().to_string(),
            _ => unreachable!("key list and getter out of sync: {key}"),
        }
    }

    /// Parses a configuration, starting from defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the assignments in `text` on top of `self` without validating.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::parse(line, format!("expected key = value, got {content:?}")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) && KEYS.contains(&key) {
                return Err(Error::parse(line, format!("duplicate key {key:?}")));
            }
            self.set(key, value).map_err(|msg| Error::parse(line, msg))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override such as a `--set` flag.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(key.trim(), value)
            .map_err(|msg| Error::Config(format!("override {}: {msg}", key.trim())))
    }

    /// Applies path overrides from the environment.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
            if !dir.is_empty() {
                self.out_dir = PathBuf::from(dir);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let s = &self.structure;
        if s.n == 0 || s.m == 0 || s.o == 0 {
            return bad("structure.n, structure.m and structure.o must be positive".into());
        }
        if s.n % s.m != 0 {
            return bad(format!("structure.m = {} must divide structure.n = {}", s.m, s.n));
        }
        if !(s.epsilon_sigma > 0.0 && s.epsilon_sigma.is_finite()) {
            return bad("structure.epsilon_sigma must be > 0".into());
        }
        self.trigger.validate()?;
        if self.model.latent_dim == 0 || self.model.hidden.contains(&0) {
            return bad("model.latent_dim and model.hidden widths must be positive".into());
        }
        let lr = self.train.adam.learning_rate;
        if !(lr > 0.0 && lr.is_finite()) {
            return bad("train.learning_rate must be > 0".into());
        }
        for (name, b) in [("train.beta1", self.train.adam.beta1), ("train.beta2", self.train.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1)"));
            }
        }
        if !(self.train.adam.epsilon > 0.0) {
            return bad("train.adam_epsilon must be > 0".into());
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be positive".into());
        }
        if self.scoring.draws == 0 {
            return bad("scoring.draws must be positive".into());
        }
        for (name, t) in [("scoring.tau_a", self.thresholds.tau_a), ("scoring.tau_b", self.thresholds.tau_b)] {
            if t.is_some_and(|t| !t.is_finite()) {
                return bad(format!("{name} must be finite"));
            }
        }
        let fpr = self.thresholds.target_fpr;
        if !(fpr > 0.0 && fpr < 1.0) {
            return bad("scoring.target_fpr must lie in (0, 1)".into());
        }
        let d = &self.data;
        if d.count == 0 || d.test_size == 0 {
            return bad("data.count and data.test_size must be positive".into());
        }
        if !(d.train_fraction > 0.0 && d.valid_fraction > 0.0 && d.train_fraction + d.valid_fraction <= 1.0) {
            return bad("data fractions must be positive and sum to at most 1".into());
        }
        let e = &self.eval;
        if e.repeats == 0 || e.train_size == 0 || e.valid_size == 0 || e.test_size == 0 || e.trigger_test_size == 0 {
            return bad("eval sizes and repeats must be positive".into());
        }
        self.sweep_divisions()?;
        Ok(())
    }

    /// Number of grid divisions implied by `eval.sweep_step`.
    pub fn sweep_divisions(&self) -> Result<usize> {
        let step = self.eval.sweep_step;
        if !(step > 0.0 && step < 1.0) {
            return Err(Error::Config("eval.sweep_step must lie in (0, 1)".into()));
        }
        let divisions = (1.0 / step).round();
        if (divisions * step - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("eval.sweep_step = {step} does not divide 1")));
        }
        Ok(divisions as usize)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn synthetic_experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            master_seed: self.seed,
            repeats: self.eval.repeats,
            train_size: self.eval.train_size,
            valid_size: self.eval.valid_size,
            test_size: self.eval.test_size,
            model: self.model.clone(),
            train: self.train.clone(),
            scoring: self.scoring,
        }
    }

    pub fn trigger_experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            test_size: self.eval.trigger_test_size,
            ..self.synthetic_experiment()
        }
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut section = "";
        for key in KEYS {
            let head = key.split_once('.').map_or("", |(h, _)| h);
            if head != section {
                writeln!(f)?;
                section = head;
            }
            writeln!(f, "{key} = {}", self.get(key))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# only a comment\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.scoring.draws, 30);
        assert_eq!(c.eval.sweep_step, 0.01);
        assert_eq!(c.sweep_divisions().unwrap(), 100);
        assert_eq!(c.model.hidden, vec![64, 64]);
        assert_eq!(c.model.latent_dim, 8);
        assert_eq!(c.train.patience, 10);
        assert_eq!(c.eval.repeats, 5);
    }

    #[test]
    fn display_round_trips() {
        let mut c = RunConfig::default();
        c.seed = 77;
        c.structure.epsilon_sigma = 0.123456789012345;
        c.model.hidden = vec![32, 16, 8];
        c.thresholds.tau_a = Some(1.5e-7);
        c.scoring.norm = ResidualNorm::Variance;
        c.scoring.aggregation = Aggregation::MaxThenMean;
        c.out_dir = PathBuf::from("/tmp/some dir");
        let text = c.to_string();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_string()).unwrap(), RunConfig::default());
    }

    #[test]
    fn parses_values_and_comments() {
        let c = RunConfig::parse("seed = 5 # trailing\nmodel.hidden = 10, 20\nscoring.tau_b=0.5\n").unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.model.hidden, vec![10, 20]);
        assert_eq!(c.thresholds.tau_b, Some(0.5));
        assert_eq!(c.thresholds.tau_a, None);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = RunConfig::parse("seed = 1\n\nbogus.key = 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = RunConfig::parse("seed = x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = RunConfig::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = RunConfig::parse("no equals sign\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn validation_rejects_bad_ranges() {
        assert!(matches!(RunConfig::parse("structure.m = 3\n"), Err(Error::Config(_))));
        assert!(RunConfig::parse("scoring.target_fpr = 1\n").is_err());
        assert!(RunConfig::parse("eval.sweep_step = 0.03\n").is_err());
        assert!(RunConfig::parse("model.hidden = 4,0\n").is_err());
        assert!(RunConfig::parse("data.train_fraction = 0.9\n").is_err());
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.apply_override("train.max_epochs=3").unwrap();
        assert_eq!(c.train.max_epochs, 3);
        assert!(c.apply_override("nokey").is_err());
        assert!(c.apply_override("train.nope=1").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let c = RunConfig::default();
        for key in KEYS {
            let mut d = RunConfig::default();
            d.set(key, &c.get(key)).unwrap();
            assert_eq!(d, c, "{key}");
        }
    }
}
