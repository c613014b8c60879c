//! Labelled samples and the delimited dataset file format shared by the
//! synthetic generator and the trigger simulator.
//!
//! Layout: a header row `x_0..x_{n-1},k_0..k_{m-1},label,corrupted_features`
//! (trigger data uses `hlt_`/`l1_` prefixes), then one row per sample.
//! `corrupted_features` holds semicolon-joined feature indices and is empty
//! for inliers. Floats are written in shortest round-trip form, so a
//! write/read cycle is bit-exact.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Inlier,
    TypeAAnomaly,
    TypeBInlier,
    TypeBAnomaly,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Inlier => "inlier",
            Label::TypeAAnomaly => "type_a_anomaly",
            Label::TypeBInlier => "type_b_inlier",
            Label::TypeBAnomaly => "type_b_anomaly",
        }
    }

    pub fn is_anomaly(self) -> bool {
        matches!(self, Label::TypeAAnomaly | Label::TypeBAnomaly)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inlier" => Ok(Label::Inlier),
            "type_a_anomaly" => Ok(Label::TypeAAnomaly),
            "type_b_inlier" => Ok(Label::TypeBInlier),
            "type_b_anomaly" => Ok(Label::TypeBAnomaly),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Which of the test-set manipulations to apply to a clean dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Large shift on one random feature.
    TypeAAnomaly,
    /// Small shift on a random set of features, ignoring clusters.
    TypeBInlier,
    /// Small shift on every feature of one random cluster.
    TypeBAnomaly,
}

impl Variant {
    pub fn label(self) -> Label {
        match self {
            Variant::TypeAAnomaly => Label::TypeAAnomaly,
            Variant::TypeBInlier => Label::TypeBInlier,
            Variant::TypeBAnomaly => Label::TypeBAnomaly,
        }
    }
}

/// One observation `x` with its known conditions `k`.
///
/// `u` and `noise` hold the generator's hidden draws when the sample was
/// produced in-process; they are empty for samples read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub k: Vec<f64>,
    pub u: Vec<f64>,
    pub noise: Vec<f64>,
    pub label: Label,
    pub corrupted: Vec<usize>,
}

impl Sample {
    pub fn new(x: Vec<f64>, k: Vec<f64>) -> Self {
        Self {
            x,
            k,
            u: Vec::new(),
            noise: Vec::new(),
            label: Label::Inlier,
            corrupted: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Naming {
    /// `x_i` / `k_i` columns.
    Synthetic,
    /// `hlt_i` / `l1_i` columns.
    Trigger,
}

impl Naming {
    fn prefixes(self) -> (&'static str, &'static str) {
        match self {
            Naming::Synthetic => ("x_", "k_"),
            Naming::Trigger => ("hlt_", "l1_"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub naming: Naming,
    x_dim: usize,
    k_dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(naming: Naming, x_dim: usize, k_dim: usize, samples: Vec<Sample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != x_dim {
                return Err(Error::dim(format!("sample {i} x"), x_dim, s.x.len()));
            }
            if s.k.len() != k_dim {
                return Err(Error::dim(format!("sample {i} k"), k_dim, s.k.len()));
            }
            if s.corrupted.is_empty() != (s.label == Label::Inlier) {
                return Err(Error::Consistency(format!(
                    "sample {i}: label {} inconsistent with {} corrupted features",
                    s.label,
                    s.corrupted.len()
                )));
            }
            if let Some(&bad) = s.corrupted.iter().find(|&&j| j >= x_dim) {
                return Err(Error::Consistency(format!(
                    "sample {i}: corrupted feature {bad} out of range"
                )));
            }
        }
        Ok(Self {
            naming,
            x_dim,
            k_dim,
            samples,
        })
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn k_dim(&self) -> usize {
        self.k_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Sample] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn x_matrix(&self) -> Matrix {
        let rows: Vec<&[f64]> = self.samples.iter().map(|s| s.x.as_slice()).collect();
        Matrix::from_rows(&rows).unwrap_or_else(|_| Matrix::zeros(0, self.x_dim))
    }

    pub fn k_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.samples.len(), self.k_dim);
        for (i, s) in self.samples.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&s.k);
        }
        m
    }

    /// A new dataset holding the samples at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            naming: self.naming,
            x_dim: self.x_dim,
            k_dim: self.k_dim,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Shuffles with `seed` and cuts contiguous train / validation / held-out
    /// blocks of the given fractions; the held-out block takes the remainder.
    pub fn split_shuffled(&self, seed: u64, train_fraction: f64, valid_fraction: f64) -> Result<[Dataset; 3]> {
        if !(train_fraction > 0.0 && valid_fraction > 0.0 && train_fraction + valid_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "split fractions {train_fraction} / {valid_fraction} are not valid"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut crate::seed::rng(seed));
        let n_train = (train_fraction * self.len() as f64).round() as usize;
        let n_valid = ((valid_fraction * self.len() as f64).round() as usize).min(self.len() - n_train);
        if n_train == 0 || n_valid == 0 {
            return Err(Error::Config(format!(
                "{} samples are too few to split into training and validation sets",
                self.len()
            )));
        }
        let (train, rest) = order.split_at(n_train);
        let (valid, held) = rest.split_at(n_valid);
        Ok([self.subset(train), self.subset(valid), self.subset(held)])
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if other.x_dim != self.x_dim || other.k_dim != self.k_dim {
            return Err(Error::dim("concatenated x", self.x_dim, other.x_dim));
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Ok(Dataset {
            naming: self.naming,
            x_dim: self.x_dim,
            k_dim: self.k_dim,
            samples,
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let (xp, kp) = self.naming.prefixes();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.x_dim).map(|i| format!("{xp}{i}")).collect();
        header.extend((0..self.k_dim).map(|i| format!("{kp}{i}")));
        header.push("label".into());
        header.push("corrupted_features".into());
        w.write_record(&header).map_err(csv_io)?;
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for s in &self.samples {
            row.clear();
            row.extend(s.x.iter().chain(&s.k).map(|v| v.to_string()));
            row.push(s.label.to_string());
            row.push(
                s.corrupted
                    .iter()
                    .map(|j| j.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            );
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(input);
        let mut records = r.records();
        let header = match records.next() {
            Some(rec) => rec.map_err(csv_parse)?,
            None => return Err(Error::parse(1, "empty dataset file")),
        };
        let (naming, x_dim, k_dim) = parse_header(&header)?;
        let width = x_dim + k_dim + 2;
        let mut samples = Vec::new();
        for rec in records {
            let rec = rec.map_err(csv_parse)?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() != width {
                return Err(Error::parse(
                    line,
                    format!("expected {width} fields, found {}", rec.len()),
                ));
            }
            let mut values = Vec::with_capacity(x_dim + k_dim);
            for (col, field) in rec.iter().take(x_dim + k_dim).enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(line, format!("column {col}: bad number {field:?}")))?;
                values.push(v);
            }
            let label: Label = rec[x_dim + k_dim]
                .trim()
                .parse()
                .map_err(|e: String| Error::parse(line, e))?;
            let corrupted_field = rec[x_dim + k_dim + 1].trim();
            let corrupted = if corrupted_field.is_empty() {
                Vec::new()
            } else {
                corrupted_field
                    .split(';')
                    .map(|t| {
                        t.trim()
                            .parse::<usize>()
                            .ok()
                            .filter(|&j| j < x_dim)
                            .ok_or_else(|| {
                                Error::parse(line, format!("bad corrupted feature index {t:?}"))
                            })
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            if corrupted.is_empty() != (label == Label::Inlier) {
                return Err(Error::parse(
                    line,
                    format!("label {label} inconsistent with corrupted_features"),
                ));
            }
            let k = values.split_off(x_dim);
            samples.push(Sample {
                x: values,
                k,
                u: Vec::new(),
                noise: Vec::new(),
                label,
                corrupted,
            });
        }
        Dataset::new(naming, x_dim, k_dim, samples)
    }
}

fn parse_header(header: &csv::StringRecord) -> Result<(Naming, usize, usize)> {
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields.len() < 3 {
        return Err(Error::parse(1, "header too short"));
    }
    let n = fields.len();
    if fields[n - 2] != "label" || fields[n - 1] != "corrupted_features" {
        return Err(Error::parse(
            1,
            "header must end with label,corrupted_features",
        ));
    }
    let naming = if fields[0].starts_with("hlt_") {
        Naming::Trigger
    } else if fields[0].starts_with("x_") {
        Naming::Synthetic
    } else {
        return Err(Error::parse(1, format!("unrecognised column {:?}", fields[0])));
    };
    let (xp, kp) = naming.prefixes();
    let numeric = &fields[..n - 2];
    let x_dim = numeric.iter().take_while(|f| f.starts_with(xp)).count();
    let k_dim = numeric.len() - x_dim;
    for (i, f) in numeric[..x_dim].iter().enumerate() {
        if *f != format!("{xp}{i}") {
            return Err(Error::parse(1, format!("expected column {xp}{i}, found {f:?}")));
        }
    }
    for (i, f) in numeric[x_dim..].iter().enumerate() {
        if *f != format!("{kp}{i}") {
            return Err(Error::parse(1, format!("expected column {kp}{i}, found {f:?}")));
        }
    }
    if x_dim == 0 {
        return Err(Error::parse(1, "no observable columns"));
    }
    Ok((naming, x_dim, k_dim))
}

fn csv_parse(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(line, e.to_string())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Consistency(format!("{other:?}")),
    }
}
