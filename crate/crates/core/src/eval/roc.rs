use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub positive_count: usize,
    pub negative_count: usize,
}

impl RocResult {
    /// Highest TPR reachable at a false-positive rate of at most `fpr`.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        self.points
            .iter()
            .filter(|p| p.0 <= fpr)
            .map(|p| p.1)
            .fold(0.0, f64::max)
    }

    /// Area under the curve restricted to `fpr <= max_fpr`, interpolating
    /// linearly at the cut.
    pub fn partial_auc(&self, max_fpr: f64) -> f64 {
        let mut area = 0.0;
        for w in self.points.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x0 >= max_fpr {
                break;
            }
            let (xe, ye) = if x1 > max_fpr {
                let t = (max_fpr - x0) / (x1 - x0);
                (max_fpr, y0 + t * (y1 - y0))
            } else {
                (x1, y1)
            };
            area += (xe - x0) * (y0 + ye) * 0.5;
        }
        area
    }
}

/// Trapezoidal area under a polyline.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

/// ROC curve and AUC. Higher scores mean "more positive".
///
/// The AUC is the Mann-Whitney statistic with mid-ranks, so each tied
/// positive/negative pair counts one half.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<RocResult> {
    if labels.len() != scores.len() {
        return Err(Error::dim("scores", labels.len(), scores.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("ROC scores".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc(format!(
            "{positives} positives and {negatives} negatives"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // mid-rank sum of positives, ranks starting at 1
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&s| labels[s]).count();
        rank_sum += mid * pos_in_group as f64;
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    let auc = (rank_sum - p * (p + 1.0) / 2.0) / (p * n);

    let mut points = Vec::with_capacity(order.len() + 1);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = order.len();
    while i > 0 {
        let top = scores[order[i - 1]];
        while i > 0 && scores[order[i - 1]] == top {
            if labels[order[i - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i -= 1;
        }
        points.push((fp as f64 / n, tp as f64 / p));
    }

    Ok(RocResult {
        points,
        auc,
        positive_count: positives,
        negative_count: negatives,
    })
}

pub fn write_roc_points<W: Write>(out: W, roc: &RocResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(["fpr", "tpr"]).map_err(io)?;
    for (f, t) in &roc.points {
        w.write_record([f.to_string(), t.to_string()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_roc_points<R: Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = r.records();
    match records.next() {
        Some(Ok(h)) if h.iter().map(str::trim).eq(["fpr", "tpr"]) => {}
        Some(Err(e)) => return Err(Error::parse(1, e.to_string())),
        _ => return Err(Error::parse(1, "ROC header must be fpr,tpr")),
    }
    let mut points = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            Error::parse(e.position().map_or(0, |p| p.line() as usize), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| (0.0..=1.0).contains(v))
                .ok_or_else(|| Error::parse(line, format!("bad rate {s:?}")))
        };
        points.push((parse(&rec[0])?, parse(&rec[1])?));
    }
    Ok(points)
}
