//! Activation clustering of TK neurons and the coverage score built on it.
//!
//! Each TK neuron's training activations are clustered with 1-D k-means for
//! every k in `2..=k_max`; the k with the best silhouette score wins. The
//! Cartesian product of the per-neuron centroid sets is the combination space,
//! and a test input covers the tuple of its nearest centroids.

use std::collections::HashSet;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineScores;
use crate::error::{Error, Result};
use crate::model::NeuronId;
use crate::pipeline::Provenance;
use crate::selection::TkNeuronSet;
use crate::trace::TraceSet;

/// Columns whose value range is below this are treated as constant.
pub const CONSTANT_RANGE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 10,
            max_iterations: 300,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    /// Strictly increasing.
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
}

fn nearest(value: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = (value - centroids[0]).abs();
    for (j, &c) in centroids.iter().enumerate().skip(1) {
        let d = (value - c).abs();
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn plus_plus_seeds<R: Rng>(values: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(values[rng.gen_range(0..values.len())]);
    let mut d2: Vec<f64> = values.iter().map(|&v| (v - centroids[0]).powi(2)).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = values.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.gen_range(0..values.len())
        };
        let c = values[pick];
        centroids.push(c);
        for (slot, &v) in d2.iter_mut().zip(values) {
            *slot = slot.min((v - c).powi(2));
        }
    }
    centroids
}

/// One k-means++ seeded Lloyd run. Needs at least `k` distinct values.
pub fn kmeans_1d<R: Rng>(values: &[f64], k: usize, cfg: &KMeansConfig, rng: &mut R) -> KMeansFit {
    assert!(k >= 1 && k <= values.len(), "k = {k} for {} values", values.len());
    let mut centroids = plus_plus_seeds(values, k, rng);
    centroids.sort_by(f64::total_cmp);
    let mut labels = vec![0usize; values.len()];
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        for (label, &v) in labels.iter_mut().zip(values) {
            *label = nearest(v, &centroids);
        }
        let mut sums = vec![0f64; k];
        let mut counts = vec![0usize; k];
        for (&label, &v) in labels.iter().zip(values) {
            sums[label] += v;
            counts[label] += 1;
        }
        let mut next: Vec<f64> = (0..k)
            .map(|j| {
                if counts[j] > 0 {
                    sums[j] / counts[j] as f64
                } else {
                    f64::NAN
                }
            })
            .collect();
        // empty cluster: move it onto the worst-served point
        for j in 0..k {
            if counts[j] == 0 {
                let (far, _) = values
                    .iter()
                    .zip(&labels)
                    .enumerate()
                    .map(|(i, (&v, &l))| (i, (v - centroids[l]).abs()))
                    .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
                next[j] = values[far];
                labels[far] = j;
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        centroids = next;
        centroids.sort_by(f64::total_cmp);
        if shift <= cfg.tolerance {
            break;
        }
    }
    centroids.dedup();
    for (label, &v) in labels.iter_mut().zip(values) {
        *label = nearest(v, &centroids);
    }
    let inertia = labels
        .iter()
        .zip(values)
        .map(|(&l, &v)| (v - centroids[l]).powi(2))
        .sum();
    KMeansFit {
        centroids,
        labels,
        inertia,
        iterations,
    }
}

/// Best of `cfg.restarts` runs by inertia, plus every run's inertia.
pub fn kmeans_1d_restarts<R: Rng>(values: &[f64], k: usize, cfg: &KMeansConfig, rng: &mut R) -> (KMeansFit, Vec<f64>) {
    let mut best: Option<KMeansFit> = None;
    let mut inertias = Vec::with_capacity(cfg.restarts);
    for _ in 0..cfg.restarts.max(1) {
        let fit = kmeans_1d(values, k, cfg, rng);
        inertias.push(fit.inertia);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    (best.expect("at least one restart"), inertias)
}

/// Mean silhouette of a 1-D clustering. Points alone in their cluster score 0,
/// as do points whose intra and nearest-cluster distances are both 0.
pub fn silhouette_score(values: &[f64], labels: &[usize]) -> Result<f64> {
    if values.len() != labels.len() {
        return Err(Error::DegenerateClustering(format!(
            "{} labels for {} values",
            labels.len(),
            values.len()
        )));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    if k < 2 || values.len() < 2 {
        return Err(Error::DegenerateClustering(format!(
            "need at least 2 clusters and 2 points, have {k} and {}",
            values.len()
        )));
    }
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (&l, &v) in labels.iter().zip(values) {
        members[l].push(v);
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(Error::DegenerateClustering(format!("cluster {empty} is empty")));
    }
    let clusters: Vec<SortedCluster> = members.into_iter().map(SortedCluster::new).collect();

    let total: f64 = labels
        .iter()
        .zip(values)
        .map(|(&own, &x)| {
            let size = clusters[own].len();
            if size == 1 {
                return 0.0;
            }
            let intra = clusters[own].distance_sum(x) / (size - 1) as f64;
            let separation = clusters
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != own)
                .map(|(_, c)| c.distance_sum(x) / c.len() as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = intra.max(separation);
            if denom > 0.0 {
                (separation - intra) / denom
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / values.len() as f64)
}

struct SortedCluster {
    values: Vec<f64>,
    prefix: Vec<f64>,
}

impl SortedCluster {
    fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(values.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &v in &values {
            acc += v;
            prefix.push(acc);
        }
        SortedCluster { values, prefix }
    }

    fn len(&self) -> usize {
        self.values.len()
    }

    /// Σ |x − y| over the cluster.
    fn distance_sum(&self, x: f64) -> f64 {
        let n = self.values.len();
        let below = self.values.partition_point(|&v| v <= x);
        let lower = x * below as f64 - self.prefix[below];
        let upper = (self.prefix[n] - self.prefix[below]) - x * (n - below) as f64;
        lower + upper
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k_max: usize,
    pub seed: u64,
    #[serde(default)]
    pub kmeans: KMeansConfig,
}

impl ClusterConfig {
    pub fn new(k_max: usize, seed: u64) -> Self {
        ClusterConfig {
            k_max,
            seed,
            kmeans: KMeansConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=255).contains(&self.k_max) {
            return Err(Error::Config(format!("k_max {} outside 1..=255", self.k_max)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronClusters {
    pub neuron: NeuronId,
    pub k: usize,
    /// Strictly increasing centroid values.
    pub centroids: Vec<f64>,
    /// Silhouette at the chosen k; absent when k = 1.
    pub silhouette: Option<f64>,
    pub inertia: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub config: ClusterConfig,
    /// One entry per TK neuron, in TK order.
    pub neurons: Vec<NeuronClusters>,
    /// Exact product of the per-neuron cluster counts.
    #[serde(with = "biguint_decimal")]
    pub tcc_size: BigUint,
}

impl ClusterModel {
    pub fn new(config: ClusterConfig, neurons: Vec<NeuronClusters>) -> Self {
        let tcc_size = combination_space_size(neurons.iter().map(|n| n.k));
        ClusterModel {
            config,
            neurons,
            tcc_size,
        }
    }

    /// Checks the structural invariants, e.g. after loading from JSON.
    pub fn validate(&self) -> Result<()> {
        for n in &self.neurons {
            if n.k == 0 || n.k != n.centroids.len() {
                return Err(Error::Invariant(format!(
                    "{}: k = {} with {} centroids",
                    n.neuron,
                    n.k,
                    n.centroids.len()
                )));
            }
            if n.centroids.windows(2).any(|w| w[0] >= w[1]) || n.centroids.iter().any(|c| !c.is_finite()) {
                return Err(Error::Invariant(format!(
                    "{}: centroids not strictly increasing",
                    n.neuron
                )));
            }
        }
        if self.tcc_size != combination_space_size(self.neurons.iter().map(|n| n.k)) {
            return Err(Error::Invariant(
                "tcc_size differs from the product of cluster counts".into(),
            ));
        }
        Ok(())
    }

    pub fn tk_neurons(&self) -> Vec<NeuronId> {
        self.neurons.iter().map(|n| n.neuron).collect()
    }
}

pub fn combination_space_size(ks: impl IntoIterator<Item = usize>) -> BigUint {
    ks.into_iter().fold(BigUint::one(), |acc, k| acc * BigUint::from(k))
}

fn neuron_seed(seed: u64, neuron: NeuronId) -> u64 {
    // splitmix64 over (seed, neuron) so each column's stream is independent of
    // fitting order
    let mut z = seed ^ ((neuron.layer as u64) << 32 | neuron.unit as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Chooses k for one activation column.
pub fn fit_column(values: &[f64], neuron: NeuronId, cfg: &ClusterConfig) -> NeuronClusters {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let single = |inertia: f64| NeuronClusters {
        neuron,
        k: 1,
        centroids: vec![mean],
        silhouette: None,
        inertia,
    };
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let spread: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    if hi - lo < CONSTANT_RANGE {
        return single(spread);
    }
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let k_cap = cfg.k_max.min(values.len().saturating_sub(1)).min(distinct.len());
    if k_cap < 2 {
        return single(spread);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(neuron_seed(cfg.seed, neuron));
    let mut best: Option<(f64, KMeansFit)> = None;
    for k in 2..=k_cap {
        let (fit, _) = kmeans_1d_restarts(values, k, &cfg.kmeans, &mut rng);
        if fit.centroids.len() < 2 {
            continue;
        }
        let Ok(score) = silhouette_score(values, &fit.labels) else {
            continue;
        };
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, fit));
        }
    }
    match best {
        Some((score, fit)) => NeuronClusters {
            neuron,
            k: fit.centroids.len(),
            centroids: fit.centroids,
            silhouette: Some(score),
            inertia: fit.inertia,
        },
        None => single(spread),
    }
}

/// Clusters every TK neuron's column of the training traces. Deterministic for
/// a given seed regardless of thread count.
pub fn fit_clusters(train: &TraceSet, tk: &TkNeuronSet, cfg: &ClusterConfig) -> Result<ClusterModel> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyTraces);
    }
    let columns = tk
        .members
        .iter()
        .map(|m| train.column_index(m.neuron).ok_or(Error::MissingNeuronColumn(m.neuron)))
        .collect::<Result<Vec<_>>>()?;
    let neurons = tk
        .members
        .par_iter()
        .zip(columns.par_iter())
        .map(|(m, &col)| {
            let values: Vec<f64> = train.column(col).map(f64::from).collect();
            fit_column(&values, m.neuron, cfg)
        })
        .collect();
    Ok(ClusterModel::new(*cfg, neurons))
}

/// Nearest-centroid index per TK neuron. `activations[i]` belongs to
/// `cm.neurons[i]`; ties go to the lower centroid.
pub fn combination_of(activations: &[f32], cm: &ClusterModel) -> Vec<u8> {
    activations
        .iter()
        .zip(&cm.neurons)
        .map(|(&a, n)| nearest(a as f64, &n.centroids) as u8)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: u64,
    #[serde(with = "biguint_decimal")]
    pub tcc_size: BigUint,
    pub tkc: f64,
    pub tk_neurons: usize,
    pub test_inputs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baselines: Option<BaselineScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Distinct combinations reached by `test`, over the model's combination space.
pub fn tkc(test: &TraceSet, cm: &ClusterModel) -> Result<CoverageReport> {
    let columns = cm
        .neurons
        .iter()
        .map(|n| test.column_index(n.neuron).ok_or(Error::MissingNeuronColumn(n.neuron)))
        .collect::<Result<Vec<_>>>()?;
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    let mut picked = vec![0f32; columns.len()];
    for row in test.iter_rows() {
        for (slot, &c) in picked.iter_mut().zip(&columns) {
            *slot = row[c];
        }
        seen.insert(combination_of(&picked, cm));
    }
    let covered = seen.len() as u64;
    let ratio = match cm.tcc_size.to_f64() {
        Some(total) if total.is_finite() && total > 0.0 => covered as f64 / total,
        _ => 0.0,
    };
    Ok(CoverageReport {
        covered,
        tcc_size: cm.tcc_size.clone(),
        tkc: ratio,
        tk_neurons: cm.neurons.len(),
        test_inputs: test.rows(),
        baselines: None,
        provenance: None,
    })
}

mod biguint_decimal {
    use num_bigint::BigUint;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(10))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        BigUint::parse_bytes(s.as_bytes(), 10)
            .ok_or_else(|| de::Error::custom(format!("`{s}` is not a decimal integer")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::{DiversityType, SelectionConfig, TkNeuron};

    /// Direct O(n²) silhouette.
    fn silhouette_oracle(values: &[f64], labels: &[usize]) -> f64 {
        let k = labels.iter().max().unwrap() + 1;
        let mut total = 0.0;
        for (i, &x) in values.iter().enumerate() {
            let mut sums = vec![0.0; k];
            let mut counts = vec![0usize; k];
            for (j, &y) in values.iter().enumerate() {
                if i != j {
                    sums[labels[j]] += (x - y).abs();
                    counts[labels[j]] += 1;
                }
            }
            let own = labels[i];
            if counts[own] == 0 {
                continue;
            }
            let a = sums[own] / counts[own] as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                total += (b - a) / m;
            }
        }
        total / values.len() as f64
    }

    fn tk_of(neurons: &[NeuronId]) -> TkNeuronSet {
        TkNeuronSet {
            config: SelectionConfig::with_top_percent(100.0),
            candidates: neurons.len(),
            members: neurons
                .iter()
                .map(|&neuron| TkNeuron {
                    neuron,
                    hd: 0.02,
                    kind: DiversityType::Gained,
                    l_id: 1,
                    l_ood: 2,
                })
                .collect(),
        }
    }

    fn two_neuron_model() -> ClusterModel {
        ClusterModel::new(
            ClusterConfig::new(5, 0),
            (0..2)
                .map(|u| NeuronClusters {
                    neuron: NeuronId::new(0, u),
                    k: 2,
                    centroids: vec![0.0, 1.0],
                    silhouette: Some(1.0),
                    inertia: 0.0,
                })
                .collect(),
        )
    }

    #[test]
    fn separated_pairs_score_high() {
        let values = [0.0, 0.1, 10.0, 10.1];
        let labels = [0, 0, 1, 1];
        let s = silhouette_score(&values, &labels).unwrap();
        assert!(s >= 0.97, "{s}");
        assert!((s - silhouette_oracle(&values, &labels)).abs() < 1e-12);
    }

    #[test]
    fn identical_points_score_zero() {
        assert_eq!(silhouette_score(&[2.0; 4], &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_labelings() {
        assert!(matches!(
            silhouette_score(&[1.0, 2.0], &[0, 0]),
            Err(Error::DegenerateClustering(_))
        ));
        assert!(matches!(
            silhouette_score(&[1.0, 2.0], &[0, 2]),
            Err(Error::DegenerateClustering(_))
        ));
    }

    #[test]
    fn natural_labels_beat_every_other_two_labeling() {
        let values = [0.0, 0.2, 0.4, 9.0, 9.3, 9.5];
        let natural = silhouette_oracle(&values, &[0, 0, 0, 1, 1, 1]);
        for mask in 1u32..(1 << 6) - 1 {
            let labels: Vec<usize> = (0..6).map(|i| ((mask >> i) & 1) as usize).collect();
            if labels == [0, 0, 0, 1, 1, 1] || labels == [1, 1, 1, 0, 0, 0] {
                continue;
            }
            let s = silhouette_score(&values, &labels).unwrap();
            assert!(s < natural, "mask {mask:06b}: {s} >= {natural}");
        }
    }

    #[test]
    fn constant_column_is_single_cluster() {
        let c = fit_column(&[0.5; 20], NeuronId::new(0, 0), &ClusterConfig::new(5, 1));
        assert_eq!((c.k, c.centroids.clone(), c.silhouette), (1, vec![0.5], None));
    }

    #[test]
    fn two_modes_give_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values: Vec<f64> = (0..200)
            .map(|i| if i % 2 == 0 { 0.0 } else { 1.0 } + rng.gen_range(-0.02..0.02))
            .collect();
        let c = fit_column(&values, NeuronId::new(0, 0), &ClusterConfig::new(5, 3));
        assert_eq!(c.k, 2);
        assert!((c.centroids[0] - 0.0).abs() < 0.05 && (c.centroids[1] - 1.0).abs() < 0.05);
    }

    #[test]
    fn tiny_columns_lower_k_max() {
        // three points: k capped at 2
        let c = fit_column(&[0.0, 0.1, 5.0], NeuronId::new(0, 0), &ClusterConfig::new(5, 0));
        assert_eq!(c.k, 2);
    }

    #[test]
    fn chosen_fit_is_best_restart() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values: Vec<f64> = (0..300).map(|_| rng.gen::<f64>().powi(3) * 10.0).collect();
        for k in 2..=5 {
            let (best, inertias) = kmeans_1d_restarts(&values, k, &KMeansConfig::default(), &mut rng);
            assert_eq!(inertias.len(), 10);
            assert!(inertias.iter().all(|&i| best.inertia <= i));
        }
    }

    #[test]
    fn nearest_centroid_with_tie_to_lower() {
        let cm = two_neuron_model();
        assert_eq!(combination_of(&[0.1, 0.9], &cm), vec![0, 1]);
        assert_eq!(combination_of(&[0.5, 0.5], &cm), vec![0, 0]);
    }

    #[test]
    fn three_of_four_combinations() {
        let cm = two_neuron_model();
        let t = TraceSet::new(cm.tk_neurons(), 4, vec![0.0, 0.0, 1.0, 0.0, 0.9, 0.1, 0.2, 1.0]).unwrap();
        let r = tkc(&t, &cm).unwrap();
        assert_eq!(r.covered, 3);
        assert_eq!(r.tcc_size, BigUint::from(4u32));
        assert_eq!(r.tkc, 0.75);
    }

    #[test]
    fn empty_test_set_scores_zero() {
        let cm = two_neuron_model();
        let t = TraceSet::new(cm.tk_neurons(), 0, vec![]).unwrap();
        assert_eq!(tkc(&t, &cm).unwrap().tkc, 0.0);
    }

    #[test]
    fn missing_column_is_reported() {
        let cm = two_neuron_model();
        let t = TraceSet::new(vec![NeuronId::new(0, 0)], 1, vec![0.0]).unwrap();
        assert!(matches!(tkc(&t, &cm), Err(Error::MissingNeuronColumn(_))));
        let tk = tk_of(&[NeuronId::new(3, 3)]);
        assert!(matches!(
            fit_clusters(&t, &tk, &ClusterConfig::new(5, 0)),
            Err(Error::MissingNeuronColumn(_))
        ));
    }

    #[test]
    fn tcc_size_does_not_wrap() {
        let size = combination_space_size(std::iter::repeat_n(5, 73));
        assert_eq!(size, BigUint::from(5u32).pow(73));
        assert!(size > BigUint::from(10u32).pow(50));
    }

    #[test]
    fn cluster_model_json_roundtrip() {
        let cm = two_neuron_model();
        let json = serde_json::to_string(&cm).unwrap();
        assert!(json.contains("\"tcc_size\":\"4\""));
        let back: ClusterModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cm);
        back.validate().unwrap();
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let neurons: Vec<NeuronId> = (0..4).map(|u| NeuronId::new(0, u)).collect();
        let values: Vec<f32> = (0..400).map(|_| rng.gen_range(0.0..3.0f32)).collect();
        let t = TraceSet::new(neurons.clone(), 100, values).unwrap();
        let tk = tk_of(&neurons);
        let cfg = ClusterConfig::new(5, 77);
        let a = fit_clusters(&t, &tk, &cfg).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| fit_clusters(&t, &tk, &cfg).unwrap());
        assert_eq!(a, b);
        a.validate().unwrap();
    }
}
