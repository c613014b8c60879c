use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hcvae::config::RunConfig;
use hcvae::cvae::{train, CvaeModel};
use hcvae::data::{Dataset, Label, Variant};
use hcvae::eval::{
    read_classifier_losses, roc_auc, run_synthetic_experiment, run_trigger_experiment, threshold_sweep_with,
    write_roc_points, ExperimentReport,
};
use hcvae::fsutil::write_atomic;
use hcvae::metrics::{calibrate_thresholds, decide, read_scores, score_dataset, write_scores, ScoreRow};
use hcvae::synth::{self, CausalStructure};
use hcvae::trigger::{self, TriggerGraph};
use hcvae::{seed, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "hcvae", version, about = "Conditional-VAE anomaly detection")]
struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set train.max_epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Master seed; same as `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; same as `--set paths.out_dir=DIR`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a causal structure, inlier data and the four test sets.
    GenData,
    /// Simulate trigger rates, inlier data and the four test sets.
    SimTrigger,
    /// Train a model on an inlier dataset and write a checkpoint.
    Train(TrainArgs),
    /// Score a dataset with a trained checkpoint.
    Score(ScoreArgs),
    /// ROC analysis or classifier-loss threshold sweep.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the repeated synthetic CVAE/VAE experiment.
    ReproduceSynthetic,
    /// Run the repeated trigger-rate CVAE/VAE experiment.
    ReproduceTrigger,
    /// Print the resolved configuration.
    PrintConfig,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Inlier dataset to split into train / validation / held-out blocks.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; defaults to `<out_dir>/model.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Clean dataset for threshold calibration; defaults to the scored data.
    #[arg(long)]
    calibrate: Option<PathBuf>,
    /// Score file; defaults to `<out_dir>/scores.csv`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScoreColumn {
    TypeA,
    TypeB,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// ROC curve of a score column against dataset labels.
    ///
    /// `--scores` and `--data` may be repeated; the i-th score file is
    /// paired with the i-th dataset and all pairs are pooled.
    Roc {
        #[arg(long, required = true)]
        scores: Vec<PathBuf>,
        /// Dataset whose labels mark positives (any anomaly label).
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "type-a")]
        column: ScoreColumn,
        /// Defaults to `<out_dir>/roc.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// AUC of a score column against `loss > t` labels for each grid `t`.
    Sweep {
        #[arg(long)]
        losses: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum, default_value = "type-a")]
        column: ScoreColumn,
        /// Defaults to `<out_dir>/sweep.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::io::read_to_string(open(path)?)?;
        cfg.apply_text(&text).map_err(|e| e.in_file(path))?;
    }
    cfg.apply_env();
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = open(path)?;
    Dataset::read_csv(file).map_err(|e| e.in_file(path))
}

fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    write_atomic(path, &buf)?;
    log::info!("wrote {} ({} samples)", path.display(), ds.len());
    Ok(())
}

fn write_test_sets(
    out: &Path,
    master: u64,
    clean: impl Fn(&str) -> Result<Dataset>,
    inject: impl Fn(&Dataset, Variant, u64) -> Result<Dataset>,
) -> Result<()> {
    write_dataset(&out.join("test_inlier.csv"), &clean("data/test/inlier")?)?;
    for variant in [Variant::TypeAAnomaly, Variant::TypeBInlier, Variant::TypeBAnomaly] {
        let name = variant.label().as_str();
        let label = format!("data/test/{name}");
        let ds = inject(&clean(&label)?, variant, seed::derive(master, &format!("{label}/inject")))?;
        write_dataset(&out.join(format!("test_{name}.csv")), &ds)?;
    }
    Ok(())
}

fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.structure;
    let structure = CausalStructure::generate(
        s.n,
        s.m,
        s.o,
        s.epsilon_sigma,
        seed::derive(cfg.seed, "structure"),
    )?;
    let out = &cfg.out_dir;
    write_atomic(&out.join("structure.json"), structure.to_json().as_bytes())?;
    let inliers = synth::generate(&structure, cfg.data.count, seed::derive(cfg.seed, "data/inliers"))?;
    write_dataset(&out.join("inliers.csv"), &inliers)?;
    write_test_sets(
        out,
        cfg.seed,
        |label| synth::generate(&structure, cfg.data.test_size, seed::derive(cfg.seed, label)),
        |ds, v, s| synth::inject(&structure, ds, v, s),
    )
}

fn cmd_sim_trigger(cfg: &RunConfig) -> Result<()> {
    let graph = TriggerGraph::generate(cfg.trigger.clone(), seed::derive(cfg.seed, "graph"))?;
    let out = &cfg.out_dir;
    let inliers = trigger::simulate(&graph, cfg.data.count, seed::derive(cfg.seed, "data/inliers"))?;
    write_dataset(&out.join("inliers.csv"), &inliers)?;
    write_test_sets(
        out,
        cfg.seed,
        |label| trigger::simulate(&graph, cfg.data.test_size, seed::derive(cfg.seed, label)),
        |ds, v, s| trigger::inject_rate_anomaly(&graph, ds, v, s),
    )
}

fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    if ds.samples().iter().any(|s| s.label != Label::Inlier) {
        return Err(Error::Consistency(format!(
            "{} contains non-inlier samples; training expects inliers only",
            args.data.display()
        )));
    }
    let [train_set, valid_set, held_out] =
        ds.split_shuffled(seed::derive(cfg.seed, "split"), cfg.data.train_fraction, cfg.data.valid_fraction)?;
    log::info!(
        "split {} samples into {} train / {} valid / {} held out",
        ds.len(),
        train_set.len(),
        valid_set.len(),
        held_out.len()
    );
    let model = CvaeModel::new(ds.x_dim(), ds.k_dim(), &cfg.model, seed::derive(cfg.seed, "init"))?;
    let train_cfg = hcvae::cvae::TrainConfig {
        seed: seed::derive(cfg.seed, "train"),
        ..cfg.train.clone()
    };
    let outcome = train(model, &train_set, &valid_set, &train_cfg)?;
    for r in &outcome.history {
        log::debug!("epoch {} train {:.6} valid {:.6}", r.epoch, r.train_loss, r.valid_loss);
    }
    log::info!(
        "trained {} epochs (best {:?}, stopped early: {})",
        outcome.history.len(),
        outcome.best_epoch,
        outcome.stopped_early
    );
    let path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("model.ckpt"));
    outcome.model.save(&path)?;
    log::info!("wrote {}", path.display());
    let mut history = String::from("epoch,train_loss,valid_loss\n");
    for r in &outcome.history {
        history.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.valid_loss));
    }
    write_atomic(&cfg.out_dir.join("history.csv"), history.as_bytes())?;
    if !held_out.is_empty() {
        write_dataset(&cfg.out_dir.join("heldout.csv"), &held_out)?;
    }
    Ok(())
}

fn cmd_score(cfg: &RunConfig, args: &ScoreArgs) -> Result<()> {
    let mut bytes = Vec::new();
    open(&args.checkpoint)?.read_to_end(&mut bytes)?;
    let model = CvaeModel::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", args.checkpoint.display())),
        other => other,
    })?;
    let ds = read_dataset(&args.data)?;
    let scores = score_dataset(&model, &ds, &cfg.scoring, seed::derive(cfg.seed, "score"))?;
    let (tau_a, tau_b) = match (cfg.thresholds.tau_a, cfg.thresholds.tau_b) {
        (Some(a), Some(b)) => (a, b),
        (fixed_a, fixed_b) => {
            let calibration = match &args.calibrate {
                Some(path) => {
                    let clean = read_dataset(path)?;
                    score_dataset(&model, &clean, &cfg.scoring, seed::derive(cfg.seed, "calibrate"))?
                }
                None => {
                    log::warn!("no calibration set given; calibrating thresholds on the scored data");
                    scores.clone()
                }
            };
            let t = calibrate_thresholds(&calibration, cfg.thresholds.target_fpr)?;
            (fixed_a.unwrap_or(t.tau_a), fixed_b.unwrap_or(t.tau_b))
        }
    };
    log::info!("thresholds tau_a = {tau_a}, tau_b = {tau_b}");
    let rows: Vec<ScoreRow> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| ScoreRow::new(i.to_string(), s, &decide(s, tau_a, tau_b)))
        .collect();
    let flagged = rows.iter().filter(|r| r.is_anomalous).count();
    log::info!("{flagged} of {} samples flagged", rows.len());
    let mut buf = Vec::new();
    write_scores(&mut buf, &rows)?;
    let path = args
        .output
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("scores.csv"));
    write_atomic(&path, &buf)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn load_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    read_scores(open(path)?).map_err(|e| e.in_file(path))
}

fn column(rows: &[ScoreRow], c: ScoreColumn) -> Vec<f64> {
    rows.iter()
        .map(|r| match c {
            ScoreColumn::TypeA => r.type_a,
            ScoreColumn::TypeB => r.type_b,
        })
        .collect()
}

fn cmd_eval(cfg: &RunConfig, cmd: &EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Roc {
            scores,
            data,
            column: c,
            output,
        } => {
            if scores.len() != data.len() {
                return Err(Error::Config(format!(
                    "{} score files but {} datasets",
                    scores.len(),
                    data.len()
                )));
            }
            let mut labels = Vec::new();
            let mut values = Vec::new();
            for (score_path, data_path) in scores.iter().zip(data) {
                let rows = load_scores(score_path)?;
                let ds = read_dataset(data_path)?;
                if rows.len() != ds.len() {
                    return Err(Error::Dimension {
                        field: format!("score rows in {}", score_path.display()),
                        expected: ds.len(),
                        actual: rows.len(),
                    });
                }
                labels.extend(ds.samples().iter().map(|s| s.label.is_anomaly()));
                values.extend(column(&rows, *c));
            }
            let roc = roc_auc(&labels, &values)?;
            let mut buf = Vec::new();
            write_roc_points(&mut buf, &roc)?;
            let path = output.clone().unwrap_or_else(|| cfg.out_dir.join("roc.csv"));
            write_atomic(&path, &buf)?;
            println!(
                "auc {} positives {} negatives {}",
                roc.auc, roc.positive_count, roc.negative_count
            );
            Ok(())
        }
        EvalCommand::Sweep {
            losses,
            scores,
            column: c,
            output,
        } => {
            let loss_rows = read_classifier_losses(open(losses)?).map_err(|e| e.in_file(losses))?;
            let rows = load_scores(scores)?;
            let by_id: std::collections::HashMap<&str, &ScoreRow> =
                rows.iter().map(|r| (r.sample_id.as_str(), r)).collect();
            let mut s = Vec::with_capacity(loss_rows.len());
            let mut a = Vec::with_capacity(loss_rows.len());
            for l in &loss_rows {
                let r = by_id.get(l.sample_id.as_str()).ok_or_else(|| {
                    Error::Consistency(format!("sample {} has a loss but no score", l.sample_id))
                })?;
                s.push(l.log_loss);
                a.push(column(std::slice::from_ref(*r), *c)[0]);
            }
            let result = threshold_sweep_with(&s, &a, cfg.sweep_divisions()?)?;
            let mut text = String::from("threshold,auc\n");
            for (t, p) in result.thresholds.iter().zip(&result.auc) {
                match p {
                    Some(p) => text.push_str(&format!("{t},{p}\n")),
                    None => text.push_str(&format!("{t},\n")),
                }
            }
            let path = output.clone().unwrap_or_else(|| cfg.out_dir.join("sweep.csv"));
            write_atomic(&path, text.as_bytes())?;
            println!(
                "{} of {} thresholds have a defined auc",
                result.valid_count(),
                result.thresholds.len()
            );
            Ok(())
        }
    }
}

fn write_report(cfg: &RunConfig, name: &str, report: &ExperimentReport) -> Result<()> {
    let path = cfg.out_dir.join(format!("{name}_report.json"));
    write_atomic(&path, report.to_json()?.as_bytes())?;
    log::info!("wrote {}", path.display());
    if cfg.eval.write_roc {
        for run in &report.runs {
            let roc = hcvae::eval::RocResult {
                points: run.roc.clone(),
                auc: run.auc,
                positive_count: run.positive_count,
                negative_count: run.negative_count,
            };
            let mut buf = Vec::new();
            write_roc_points(&mut buf, &roc)?;
            let file = format!("{name}_{}_{}_r{}.csv", run.model, run.problem, run.repeat);
            write_atomic(&cfg.out_dir.join("roc").join(file), &buf)?;
        }
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for s in &report.summary {
        writeln!(
            out,
            "{name} {} {} mean_auc {:.4} variance {:.6} repeats {}",
            s.model, s.problem, s.mean_auc, s.variance_auc, s.repeats
        )?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    log::info!("resolved configuration:\n{cfg}");
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg),
        Command::SimTrigger => cmd_sim_trigger(&cfg),
        Command::Train(args) => cmd_train(&cfg, args),
        Command::Score(args) => cmd_score(&cfg, args),
        Command::Eval(cmd) => cmd_eval(&cfg, cmd),
        Command::ReproduceSynthetic => {
            let report = run_synthetic_experiment(&cfg.synthetic_experiment(), &cfg.structure)?;
            write_report(&cfg, "synthetic", &report)
        }
        Command::ReproduceTrigger => {
            let report = run_trigger_experiment(&cfg.trigger_experiment(), &cfg.trigger)?;
            write_report(&cfg, "trigger", &report)
        }
        Command::PrintConfig => {
            print!("{cfg}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
