//! A stand-in for hierarchical trigger-rate data.
//!
//! Each L1 path seeds `hlt_per_l1` HLT paths. Per sample a shared luminosity
//! factor `g ~ LogNormal(0, lumi_sigma^2)` scales every L1 rate, and each L1
//! path carries its own log-normal jitter:
//!
//! ```text
//! l1_p  = rate_scale * g * b_p * exp(l1_jitter * xi_p)
//! hlt_h = a_h * d_{parent(h)} * l1_{parent(h)} * max(1 + eta_h, 0)
//! ```
//!
//! `d_p = exp(group_drift * zeta_p)` is an unobserved per-group efficiency
//! drift and `eta_h ~ N(0, noise_sigma^2)`. HLT rates are the observables,
//! L1 rates the known conditions.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, Naming, Sample, Variant};
use crate::error::{Error, Result};
use crate::seed;

/// Multiplier, in units of `noise_sigma`, for a single-path anomaly.
pub const TYPE_A_SHIFT: f64 = 5.0;
/// Multiplier, in units of `noise_sigma`, for multi-path shifts.
pub const TYPE_B_SHIFT: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerParams {
    pub l1_count: usize,
    pub hlt_per_l1: usize,
    pub noise_sigma: f64,
    pub rate_scale: f64,
    pub lumi_sigma: f64,
    pub l1_jitter: f64,
    pub group_drift: f64,
}

impl Default for TriggerParams {
    fn default() -> Self {
        Self {
            l1_count: 4,
            hlt_per_l1: 6,
            noise_sigma: 0.05,
            rate_scale: 1000.0,
            lumi_sigma: 0.2,
            l1_jitter: 0.1,
            group_drift: 0.05,
        }
    }
}

impl TriggerParams {
    pub fn validate(&self) -> Result<()> {
        if self.l1_count == 0 || self.hlt_per_l1 == 0 {
            return Err(Error::Config("l1_count and hlt_per_l1 must be at least 1".into()));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be > 0, got {}", self.noise_sigma)));
        }
        if !(self.rate_scale > 0.0 && self.rate_scale.is_finite()) {
            return Err(Error::Config(format!("rate_scale must be > 0, got {}", self.rate_scale)));
        }
        for (name, v) in [
            ("lumi_sigma", self.lumi_sigma),
            ("l1_jitter", self.l1_jitter),
            ("group_drift", self.group_drift),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriggerGraph {
    pub params: TriggerParams,
    /// L1 parent of each HLT path.
    parent: Vec<usize>,
    acceptance: Vec<f64>,
    baseline: Vec<f64>,
    pub seed: u64,
}

impl TriggerGraph {
    /// Acceptances are drawn from U[0.05, 0.5] and L1 baselines from U[0.5, 2].
    pub fn generate(params: TriggerParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = seed::rng(seed::derive(seed, "trigger/graph"));
        let hlt = params.l1_count * params.hlt_per_l1;
        let parent = (0..hlt).map(|h| h / params.hlt_per_l1).collect();
        let acceptance = (0..hlt).map(|_| rng.random_range(0.05..0.5)).collect();
        let baseline = (0..params.l1_count).map(|_| rng.random_range(0.5..2.0)).collect();
        Ok(Self {
            params,
            parent,
            acceptance,
            baseline,
            seed,
        })
    }

    pub fn l1_count(&self) -> usize {
        self.params.l1_count
    }

    pub fn hlt_count(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, hlt: usize) -> usize {
        self.parent[hlt]
    }

    pub fn acceptance(&self) -> &[f64] {
        &self.acceptance
    }

    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    /// HLT paths seeded by one L1 path.
    pub fn group(&self, l1: usize) -> Vec<usize> {
        (0..self.hlt_count()).filter(|&h| self.parent[h] == l1).collect()
    }

    /// HLT rates from L1 rates, group drifts and relative noise.
    pub fn hlt_rates(&self, l1: &[f64], drift: &[f64], eta: &[f64]) -> Vec<f64> {
        (0..self.hlt_count())
            .map(|h| {
                let p = self.parent[h];
                self.acceptance[h] * drift[p] * l1[p] * (1.0 + eta[h]).max(0.0)
            })
            .collect()
    }
}

/// Draws `count` inlier samples.
///
/// Retained hidden state per sample: `u = [g, d_0 .. d_{L-1}]` and
/// `noise = eta`.
pub fn simulate(graph: &TriggerGraph, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    let p = &graph.params;
    let mut rng = seed::rng(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let samples = (0..count)
        .map(|_| {
            let g = (p.lumi_sigma * normal()).exp();
            let l1: Vec<f64> = graph
                .baseline
                .iter()
                .map(|b| p.rate_scale * g * b * (p.l1_jitter * normal()).exp())
                .collect();
            let drift: Vec<f64> = (0..p.l1_count).map(|_| (p.group_drift * normal()).exp()).collect();
            let eta: Vec<f64> = (0..graph.hlt_count()).map(|_| p.noise_sigma * normal()).collect();
            let x = graph.hlt_rates(&l1, &drift, &eta);
            let mut u = Vec::with_capacity(1 + drift.len());
            u.push(g);
            u.extend_from_slice(&drift);
            Sample {
                x,
                k: l1,
                u,
                noise: eta,
                label: Label::Inlier,
                corrupted: Vec::new(),
            }
        })
        .collect();
    Dataset::new(Naming::Trigger, graph.hlt_count(), p.l1_count, samples)
}

/// Multiplies the chosen HLT rates by `1 + shift * noise_sigma`.
pub fn inject_rate_anomaly(
    graph: &TriggerGraph,
    dataset: &Dataset,
    variant: Variant,
    seed: u64,
) -> Result<Dataset> {
    let n = graph.hlt_count();
    if dataset.x_dim() != n || dataset.k_dim() != graph.l1_count() {
        return Err(Error::dim("dataset x", n, dataset.x_dim()));
    }
    let per_group = graph.params.hlt_per_l1;
    let mut rng = seed::rng(seed);
    let mut out = dataset.clone();
    for (i, sample) in out.samples_mut().iter_mut().enumerate() {
        if sample.label != Label::Inlier {
            return Err(Error::Consistency(format!("sample {i} is not an inlier")));
        }
        let (mut features, shift) = match variant {
            Variant::TypeAAnomaly => (vec![rng.random_range(0..n)], TYPE_A_SHIFT),
            Variant::TypeBInlier => {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut rng);
                idx.truncate(per_group);
                (idx, TYPE_B_SHIFT)
            }
            Variant::TypeBAnomaly => (graph.group(rng.random_range(0..graph.l1_count())), TYPE_B_SHIFT),
        };
        let factor = 1.0 + shift * graph.params.noise_sigma;
        for &h in &features {
            sample.x[h] *= factor;
        }
        features.sort_unstable();
        sample.corrupted = features;
        sample.label = variant.label();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> TriggerGraph {
        TriggerGraph::generate(TriggerParams::default(), 3).unwrap()
    }

    #[test]
    fn default_shape() {
        let g = graph();
        assert_eq!(g.hlt_count(), 24);
        assert_eq!(g.l1_count(), 4);
        for l1 in 0..4 {
            assert_eq!(g.group(l1).len(), 6);
        }
        assert!(g.acceptance().iter().all(|&a| (0.05..0.5).contains(&a)));
        assert_eq!(g, graph());
    }

    #[test]
    fn single_edge() {
        let p = TriggerParams {
            l1_count: 1,
            hlt_per_l1: 1,
            ..TriggerParams::default()
        };
        let g = TriggerGraph::generate(p, 0).unwrap();
        assert_eq!(g.hlt_count(), 1);
        assert_eq!(g.parent(0), 0);
    }

    #[test]
    fn rejects_bad_params() {
        let p = TriggerParams {
            noise_sigma: 0.0,
            ..TriggerParams::default()
        };
        assert!(matches!(TriggerGraph::generate(p, 0), Err(Error::Config(_))));
        let p = TriggerParams {
            hlt_per_l1: 0,
            ..TriggerParams::default()
        };
        assert!(TriggerGraph::generate(p, 0).is_err());
    }

    #[test]
    fn noiseless_ratio_is_acceptance() {
        let p = TriggerParams {
            group_drift: 0.0,
            ..TriggerParams::default()
        };
        let g = TriggerGraph::generate(p, 5).unwrap();
        let l1 = [800.0, 1200.0, 950.0, 1500.0];
        let x = g.hlt_rates(&l1, &[1.0; 4], &[0.0; 24]);
        for h in 0..24 {
            let ratio = x[h] / l1[g.parent(h)];
            assert!((ratio - g.acceptance()[h]).abs() < 1e-15);
        }
    }

    #[test]
    fn rates_non_negative_and_reproducible() {
        let g = graph();
        let ds = simulate(&g, 500, 9).unwrap();
        assert!(ds.samples().iter().all(|s| s.x.iter().chain(&s.k).all(|&r| r >= 0.0)));
        assert_eq!(ds, simulate(&g, 500, 9).unwrap());
        for s in ds.samples() {
            let drift = &s.u[1..];
            assert_eq!(s.x, g.hlt_rates(&s.k, drift, &s.noise));
        }
    }

    #[test]
    fn injection_variants() {
        let g = graph();
        let ds = simulate(&g, 200, 1).unwrap();
        let a = inject_rate_anomaly(&g, &ds, Variant::TypeAAnomaly, 2).unwrap();
        let b = inject_rate_anomaly(&g, &ds, Variant::TypeBAnomaly, 2).unwrap();
        let bi = inject_rate_anomaly(&g, &ds, Variant::TypeBInlier, 2).unwrap();
        for i in 0..ds.len() {
            let orig = &ds.samples()[i];
            let sa = &a.samples()[i];
            assert_eq!(sa.corrupted.len(), 1);
            assert_eq!(sa.label, Label::TypeAAnomaly);
            let sb = &b.samples()[i];
            assert_eq!(sb.corrupted.len(), 6);
            let p = g.parent(sb.corrupted[0]);
            assert_eq!(sb.corrupted, g.group(p));
            assert_eq!(bi.samples()[i].corrupted.len(), 6);
            for (s, factor) in [(sa, 1.0 + 5.0 * 0.05), (sb, 1.0 + 3.0 * 0.05)] {
                for h in 0..24 {
                    if s.corrupted.contains(&h) {
                        assert_eq!(s.x[h], orig.x[h] * factor);
                    } else {
                        assert_eq!(s.x[h].to_bits(), orig.x[h].to_bits());
                    }
                    assert!(s.x[h] >= 0.0);
                }
            }
        }
        assert!(inject_rate_anomaly(&g, &a, Variant::TypeAAnomaly, 0).is_err());
    }
}
