use std::io::Read;

use serde::{Deserialize, Serialize};

use super::roc::roc_auc;
use crate::error::{Error, Result};

/// AUC of the anomaly score against labels `s > t`, for each `t` on the
/// grid `0.01, 0.02, ..., 0.99`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub thresholds: Vec<f64>,
    /// `None` where the binarized labels hold a single class.
    pub auc: Vec<Option<f64>>,
    pub losses: Vec<f64>,
}

impl SweepResult {
    pub fn valid_count(&self) -> usize {
        self.auc.iter().filter(|a| a.is_some()).count()
    }
}

/// Grid divisions of the unit interval; a step of 0.01.
pub const DEFAULT_DIVISIONS: usize = 100;

/// Interior points `i / divisions` for `i = 1 .. divisions - 1`.
pub fn sweep_grid_with(divisions: usize) -> Vec<f64> {
    (1..divisions).map(|i| i as f64 / divisions as f64).collect()
}

pub fn sweep_grid() -> Vec<f64> {
    sweep_grid_with(DEFAULT_DIVISIONS)
}

pub fn threshold_sweep(classifier_losses: &[f64], anomaly_scores: &[f64]) -> Result<SweepResult> {
    threshold_sweep_with(classifier_losses, anomaly_scores, DEFAULT_DIVISIONS)
}

pub fn threshold_sweep_with(
    classifier_losses: &[f64],
    anomaly_scores: &[f64],
    divisions: usize,
) -> Result<SweepResult> {
    if divisions < 2 {
        return Err(Error::Config(format!("sweep needs at least 2 divisions, got {divisions}")));
    }
    if classifier_losses.len() != anomaly_scores.len() {
        return Err(Error::dim(
            "anomaly scores",
            classifier_losses.len(),
            anomaly_scores.len(),
        ));
    }
    if classifier_losses.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("classifier losses".into()));
    }
    let thresholds = sweep_grid_with(divisions);
    let mut auc = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let labels: Vec<bool> = classifier_losses.iter().map(|&s| s > t).collect();
        match roc_auc(&labels, anomaly_scores) {
            Ok(r) => auc.push(Some(r.auc)),
            Err(Error::UndefinedAuc(_)) => auc.push(None),
            Err(e) => return Err(e),
        }
    }
    let result = SweepResult {
        thresholds,
        auc,
        losses: classifier_losses.to_vec(),
    };
    if result.valid_count() == 0 {
        log::warn!("every sweep threshold leaves a single class; no AUC defined");
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub sample_id: String,
    pub log_loss: f64,
}

/// Reads a `sample_id,log_loss` file.
pub fn read_classifier_losses<R: Read>(input: R) -> Result<Vec<LossRow>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = r.records();
    match records.next() {
        Some(Ok(h)) if h.iter().map(str::trim).eq(["sample_id", "log_loss"]) => {}
        Some(Err(e)) => return Err(Error::parse(1, e.to_string())),
        _ => return Err(Error::parse(1, "loss header must be sample_id,log_loss")),
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            Error::parse(e.position().map_or(0, |p| p.line() as usize), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(Error::parse(line, format!("expected 2 fields, found {}", rec.len())));
        }
        let log_loss: f64 = rec[1]
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| !v.is_nan())
            .ok_or_else(|| Error::parse(line, format!("bad loss {:?}", &rec[1])))?;
        rows.push(LossRow {
            sample_id: rec[0].trim().to_string(),
            log_loss,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_ninety_nine_points() {
        let g = sweep_grid();
        assert_eq!(g.len(), 99);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[49], 0.5);
        assert_eq!(g[98], 0.99);
    }

    #[test]
    fn self_consistent_scores_are_perfect() {
        let s: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).fract()).collect();
        let r = threshold_sweep(&s, &s).unwrap();
        assert!(r.valid_count() > 0);
        for a in r.auc.iter().flatten() {
            assert_eq!(*a, 1.0);
        }
    }

    #[test]
    fn label_flip_happens_at_grid_point() {
        // five losses at 0.495, five at 0.505: labels split only at t = 0.50
        let s: Vec<f64> = (0..10).map(|i| if i < 5 { 0.495 } else { 0.505 }).collect();
        let scores: Vec<f64> = (0..10).map(f64::from).collect();
        let r = threshold_sweep(&s, &scores).unwrap();
        for (t, a) in r.thresholds.iter().zip(&r.auc) {
            if *t == 0.5 {
                assert_eq!(*a, Some(1.0));
            } else {
                assert_eq!(*a, None, "t = {t}");
            }
        }
    }

    #[test]
    fn constant_losses_give_no_auc() {
        let r = threshold_sweep(&[0.3; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.valid_count(), 0);
    }

    #[test]
    fn loss_file_parsing() {
        let text = "sample_id,log_loss\na,0.25\nb,1e-3\n";
        let rows = read_classifier_losses(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].log_loss, 1e-3);
        let bad = "sample_id,log_loss\na,zero\n";
        assert!(matches!(
            read_classifier_losses(bad.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
