//! Synthetic data with a known causal structure.
//!
//! Each feature `j` is generated as `x_j = f_j(u) * sum_i S[j][i] k_i + eps_j`
//! where `u` (unknown) and `k` (known) are i.i.d. standard normal, `f_j` is
//! the product of a fixed non-empty subset of `u`, `S` is a binary matrix with
//! exactly one 1 per row and `n/m` ones per column, and
//! `eps_j ~ N(0, epsilon_sigma^2)`. Features driven by the same column of `S`
//! form a cluster.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, Naming, Sample, Variant};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct CausalStructure {
    n: usize,
    m: usize,
    o: usize,
    /// Column of `S` holding the single 1 of each row.
    cluster_of: Vec<usize>,
    u_assignment: Vec<Vec<usize>>,
    pub epsilon_sigma: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StructureFile {
    format: String,
    version: u32,
    n: usize,
    m: usize,
    o: usize,
    epsilon_sigma: f64,
    seed: u64,
    s: Vec<Vec<u8>>,
    u_assignment: Vec<Vec<usize>>,
}

const STRUCTURE_FORMAT: &str = "hcvae-causal-structure";

/// Sign of the injected shift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftSign {
    #[default]
    Positive,
    /// Each corrupted sample draws `+` or `-` with equal probability.
    Symmetric,
}

/// Shift sizes, in units of `epsilon_sigma`.
pub const TYPE_A_SHIFT: f64 = 5.0;
pub const TYPE_B_SHIFT: f64 = 3.0;

impl CausalStructure {
    /// Balanced contiguous clusters; `u` subsets of size uniform in `1..=o`.
    pub fn generate(n: usize, m: usize, o: usize, epsilon_sigma: f64, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 || n % m != 0 {
            return Err(Error::Config(format!("m = {m} must divide n = {n}")));
        }
        if o == 0 {
            return Err(Error::Config("o must be at least 1".into()));
        }
        if !(epsilon_sigma > 0.0 && epsilon_sigma.is_finite()) {
            return Err(Error::Config("epsilon_sigma must be positive".into()));
        }
        let per_cluster = n / m;
        let mut rng = seed::rng(seed);
        let all: Vec<usize> = (0..o).collect();
        let u_assignment = (0..n)
            .map(|_| {
                let size = rng.random_range(1..=o);
                let mut subset: Vec<usize> = all.choose_multiple(&mut rng, size).copied().collect();
                subset.sort_unstable();
                subset
            })
            .collect();
        Ok(Self {
            n,
            m,
            o,
            cluster_of: (0..n).map(|j| j / per_cluster).collect(),
            u_assignment,
            epsilon_sigma,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn o(&self) -> usize {
        self.o
    }

    pub fn cluster_of(&self, feature: usize) -> usize {
        self.cluster_of[feature]
    }

    pub fn u_assignment(&self) -> &[Vec<usize>] {
        &self.u_assignment
    }

    /// The binary `n x m` matrix `S`.
    pub fn s_matrix(&self) -> Vec<Vec<u8>> {
        self.cluster_of
            .iter()
            .map(|&c| (0..self.m).map(|i| u8::from(i == c)).collect())
            .collect()
    }

    /// Features whose `S` row selects `cluster`.
    pub fn cluster_members(&self, cluster: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.cluster_of[j] == cluster).collect()
    }

    /// `f_j(u)`: product of the assigned `u` entries in ascending index order.
    pub fn latent_product(&self, feature: usize, u: &[f64]) -> f64 {
        self.u_assignment[feature].iter().map(|&i| u[i]).product()
    }

    /// Observables for given latent draws and noise.
    pub fn evaluate(&self, u: &[f64], k: &[f64], eps: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| self.latent_product(j, u) * k[self.cluster_of[j]] + eps[j])
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n % self.m != 0 || self.o == 0 {
            return Err(Error::Config("inconsistent n, m, o".into()));
        }
        if self.cluster_of.len() != self.n || self.u_assignment.len() != self.n {
            return Err(Error::Config("structure rows must equal n".into()));
        }
        let per = self.n / self.m;
        for c in 0..self.m {
            let count = self.cluster_of.iter().filter(|&&v| v == c).count();
            if count != per {
                return Err(Error::Config(format!(
                    "column {c} of S has {count} ones, expected {per}"
                )));
            }
        }
        for (j, subset) in self.u_assignment.iter().enumerate() {
            if subset.is_empty() || subset.iter().any(|&i| i >= self.o) {
                return Err(Error::Config(format!("bad u assignment for feature {j}")));
            }
            let unique: BTreeSet<_> = subset.iter().collect();
            if unique.len() != subset.len() {
                return Err(Error::Config(format!("repeated u index for feature {j}")));
            }
        }
        if !(self.epsilon_sigma > 0.0 && self.epsilon_sigma.is_finite()) {
            return Err(Error::Config("epsilon_sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = StructureFile {
            format: STRUCTURE_FORMAT.into(),
            version: 1,
            n: self.n,
            m: self.m,
            o: self.o,
            epsilon_sigma: self.epsilon_sigma,
            seed: self.seed,
            s: self.s_matrix(),
            u_assignment: self.u_assignment.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: StructureFile = serde_json::from_str(text)
            .map_err(|e| Error::parse(e.line(), e.to_string()))?;
        if file.format != STRUCTURE_FORMAT || file.version != 1 {
            return Err(Error::parse(1, "not a version 1 causal structure file"));
        }
        if file.s.len() != file.n {
            return Err(Error::Config("S must have n rows".into()));
        }
        let mut cluster_of = Vec::with_capacity(file.n);
        for (j, row) in file.s.iter().enumerate() {
            if row.len() != file.m || row.iter().any(|&v| v > 1) {
                return Err(Error::Config(format!("row {j} of S is not binary of width m")));
            }
            let ones: Vec<usize> = (0..row.len()).filter(|&i| row[i] == 1).collect();
            if ones.len() != 1 {
                return Err(Error::Config(format!("row {j} of S must have exactly one 1")));
            }
            cluster_of.push(ones[0]);
        }
        let s = Self {
            n: file.n,
            m: file.m,
            o: file.o,
            cluster_of,
            u_assignment: file.u_assignment,
            epsilon_sigma: file.epsilon_sigma,
            seed: file.seed,
        };
        s.validate()?;
        Ok(s)
    }
}

/// `count` inlier samples, drawing `u`, `k`, then `eps` for each sample.
pub fn generate(structure: &CausalStructure, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    let mut rng = seed::rng(seed);
    let noise = Normal::new(0.0, structure.epsilon_sigma)
        .map_err(|e| Error::Config(e.to_string()))?;
    let samples = (0..count)
        .map(|_| {
            let u: Vec<f64> = (0..structure.o).map(|_| StandardNormal.sample(&mut rng)).collect();
            let k: Vec<f64> = (0..structure.m).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eps: Vec<f64> = (0..structure.n).map(|_| noise.sample(&mut rng)).collect();
            let x = structure.evaluate(&u, &k, &eps);
            Sample {
                x,
                k,
                u,
                noise: eps,
                label: Label::Inlier,
                corrupted: Vec::new(),
            }
        })
        .collect();
    Dataset::new(Naming::Synthetic, structure.n, structure.m, samples)
}

/// Applies a test-set manipulation to every sample of an inlier dataset.
pub fn inject(
    structure: &CausalStructure,
    dataset: &Dataset,
    variant: Variant,
    seed: u64,
) -> Result<Dataset> {
    inject_with(structure, dataset, variant, ShiftSign::Positive, seed)
}

pub fn inject_with(
    structure: &CausalStructure,
    dataset: &Dataset,
    variant: Variant,
    sign: ShiftSign,
    seed: u64,
) -> Result<Dataset> {
    if dataset.x_dim() != structure.n || dataset.k_dim() != structure.m {
        return Err(Error::dim("dataset x", structure.n, dataset.x_dim()));
    }
    if structure.m == 0 {
        return Err(Error::Config("cluster variants need m > 0".into()));
    }
    let per_cluster = structure.n / structure.m;
    let mut rng = seed::rng(seed);
    let mut out = dataset.clone();
    for (i, sample) in out.samples_mut().iter_mut().enumerate() {
        if sample.label != Label::Inlier {
            return Err(Error::Consistency(format!("sample {i} is not an inlier")));
        }
        let (features, multiple) = match variant {
            Variant::TypeAAnomaly => (vec![rng.random_range(0..structure.n)], TYPE_A_SHIFT),
            Variant::TypeBInlier => {
                let mut idx: Vec<usize> = (0..structure.n).collect();
                idx.shuffle(&mut rng);
                idx.truncate(per_cluster);
                (idx, TYPE_B_SHIFT)
            }
            Variant::TypeBAnomaly => {
                let c = rng.random_range(0..structure.m);
                (structure.cluster_members(c), TYPE_B_SHIFT)
            }
        };
        let direction = match sign {
            ShiftSign::Positive => 1.0,
            ShiftSign::Symmetric => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        let shift = direction * multiple * structure.epsilon_sigma;
        let retained = sample.noise.len() == structure.n && sample.u.len() == structure.o;
        for &j in &features {
            if retained {
                sample.noise[j] += shift;
                sample.x[j] = structure.latent_product(j, &sample.u) * sample.k[structure.cluster_of[j]]
                    + sample.noise[j];
            } else {
                sample.x[j] += shift;
            }
        }
        let mut sorted = features;
        sorted.sort_unstable();
        sample.corrupted = sorted;
        sample.label = variant.label();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_sized_structure_is_balanced() {
        let s = CausalStructure::generate(100, 5, 5, 0.1, 1).unwrap();
        let sm = s.s_matrix();
        for c in 0..5 {
            assert_eq!(sm.iter().filter(|row| row[c] == 1).count(), 20);
        }
        assert!(sm.iter().all(|row| row.iter().map(|&v| v as usize).sum::<usize>() == 1));
        assert!(s.u_assignment().iter().all(|a| !a.is_empty() && a.iter().all(|&i| i < 5)));
    }

    #[test]
    fn degenerate_structure() {
        let s = CausalStructure::generate(1, 1, 1, 0.1, 0).unwrap();
        assert_eq!(s.s_matrix(), vec![vec![1]]);
        assert_eq!(s.u_assignment(), &[vec![0]]);
    }

    #[test]
    fn structure_is_deterministic_in_seed() {
        let a = CausalStructure::generate(20, 4, 3, 0.1, 5).unwrap();
        let b = CausalStructure::generate(20, 4, 3, 0.1, 5).unwrap();
        let c = CausalStructure::generate(20, 4, 3, 0.1, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.u_assignment(), c.u_assignment());
    }

    #[test]
    fn m_must_divide_n() {
        assert!(matches!(
            CausalStructure::generate(10, 3, 2, 0.1, 0),
            Err(Error::Config(_))
        ));
        assert!(CausalStructure::generate(10, 0, 2, 0.1, 0).is_err());
        assert!(CausalStructure::generate(10, 5, 0, 0.1, 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = CausalStructure::generate(12, 3, 4, 0.25, 9).unwrap();
        let back = CausalStructure::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn json_rejects_unbalanced_s() {
        let s = CausalStructure::generate(4, 2, 1, 0.1, 0).unwrap();
        let text = s.to_json().replacen("[\n    [\n      1,\n      0\n    ]", "[\n    [\n      0,\n      1\n    ]", 1);
        assert_ne!(text, s.to_json());
        assert!(CausalStructure::from_json(&text).is_err());
    }

    #[test]
    fn single_factor_reduces_to_product() {
        let mut s = CausalStructure::generate(4, 1, 1, 1e-300, 0).unwrap();
        s.u_assignment = vec![vec![0]; 4];
        let ds = generate(&s, 50, 3).unwrap();
        for sample in ds.samples() {
            let ratio = sample.x[0] / sample.k[0];
            assert!((ratio - sample.u[0]).abs() < 1e-12 * sample.u[0].abs().max(1.0));
            for j in 1..4 {
                assert_eq!(sample.x[j] / sample.k[0], ratio);
            }
        }
    }

    #[test]
    fn type_a_corrupts_exactly_one_feature() {
        let s = CausalStructure::generate(100, 5, 5, 0.1, 2).unwrap();
        let clean = generate(&s, 40, 4).unwrap();
        let bad = inject(&s, &clean, Variant::TypeAAnomaly, 5).unwrap();
        for (c, b) in clean.samples().iter().zip(bad.samples()) {
            assert_eq!(b.corrupted.len(), 1);
            assert_eq!(b.label, Label::TypeAAnomaly);
            let j = b.corrupted[0];
            assert!((b.noise[j] - c.noise[j] - 0.5).abs() < 1e-12);
            for i in (0..100).filter(|&i| i != j) {
                assert_eq!(b.x[i].to_bits(), c.x[i].to_bits());
            }
        }
    }

    #[test]
    fn type_b_anomaly_hits_one_full_cluster() {
        let s = CausalStructure::generate(100, 5, 5, 0.1, 2).unwrap();
        let clean = generate(&s, 40, 4).unwrap();
        let bad = inject(&s, &clean, Variant::TypeBAnomaly, 6).unwrap();
        for b in bad.samples() {
            assert_eq!(b.corrupted.len(), 20);
            let c = s.cluster_of(b.corrupted[0]);
            assert_eq!(b.corrupted, s.cluster_members(c));
        }
    }

    #[test]
    fn type_b_inlier_ignores_clusters() {
        let s = CausalStructure::generate(100, 5, 5, 0.1, 2).unwrap();
        let clean = generate(&s, 40, 4).unwrap();
        let bad = inject(&s, &clean, Variant::TypeBInlier, 7).unwrap();
        let mut single_cluster = 0;
        for b in bad.samples() {
            assert_eq!(b.corrupted.len(), 20);
            let clusters: BTreeSet<usize> = b.corrupted.iter().map(|&j| s.cluster_of(j)).collect();
            if clusters.len() == 1 {
                single_cluster += 1;
            }
        }
        assert_eq!(single_cluster, 0);
    }

    #[test]
    fn symmetric_shift_uses_both_signs() {
        let s = CausalStructure::generate(10, 2, 2, 0.1, 2).unwrap();
        let clean = generate(&s, 200, 4).unwrap();
        let bad = inject_with(&s, &clean, Variant::TypeAAnomaly, ShiftSign::Symmetric, 8).unwrap();
        let (mut up, mut down) = (0, 0);
        for (c, b) in clean.samples().iter().zip(bad.samples()) {
            let j = b.corrupted[0];
            if b.noise[j] > c.noise[j] {
                up += 1;
            } else {
                down += 1;
            }
        }
        assert!(up > 50 && down > 50);
    }

    #[test]
    fn injection_requires_inliers() {
        let s = CausalStructure::generate(10, 2, 2, 0.1, 2).unwrap();
        let clean = generate(&s, 5, 4).unwrap();
        let bad = inject(&s, &clean, Variant::TypeAAnomaly, 1).unwrap();
        assert!(inject(&s, &bad, Variant::TypeBAnomaly, 1).is_err());
    }
}
