//! Shared helpers for the integration suites: fixture loading, random
//! instance generators and brute-force reference implementations.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use tkcov::cluster::{ClusterConfig, ClusterModel, NeuronClusters};
use tkcov::model::Model;
use tkcov::trace::{generate_traces, Dataset};
use tkcov::{NeuronId, TraceSet};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn load_model(name: &str) -> Model {
    tkcov::pipeline::load_model_file(&fixture(name)).expect("fixture model")
}

pub fn load_dataset(name: &str) -> Dataset {
    Dataset::load(&fixture(&format!("{name}.json"))).expect("fixture dataset")
}

/// Fixture MLP traces for the id_train, ood and id_test datasets.
pub fn mlp_traces() -> (Model, TraceSet, TraceSet, TraceSet) {
    let model = load_model("mlp.dknn");
    let trace = |name: &str| generate_traces(&model, &load_dataset(name)).expect("tracing");
    let (train, ood, test) = (trace("id_train"), trace("ood"), trace("id_test"));
    (model, train, ood, test)
}

/// Neuron ids spread over a few layers, canonical order.
pub fn random_neurons<R: Rng>(rng: &mut R, n: usize) -> Vec<NeuronId> {
    let layers = rng.gen_range(1..=3u16);
    let mut ids: Vec<NeuronId> = (0..n)
        .map(|j| NeuronId::new((j % layers as usize) as u16, (j / layers as usize) as u32))
        .collect();
    ids.sort();
    ids
}

/// Values on a coarse grid so ties are common.
pub fn random_traces<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f32, hi: f32) -> TraceSet {
    let grid = rng.gen_range(4..=40);
    let values = (0..rows * cols)
        .map(|_| lo + (hi - lo) * rng.gen_range(0..=grid) as f32 / grid as f32)
        .collect();
    TraceSet::new(random_neurons(rng, cols), rows, values).unwrap()
}

/// Random model over `neurons` with strictly increasing centroids.
pub fn random_cluster_model<R: Rng>(rng: &mut R, neurons: &[NeuronId], k_max: usize) -> ClusterModel {
    let clusters = neurons
        .iter()
        .map(|&neuron| {
            let k = rng.gen_range(1..=k_max);
            let mut centroids: Vec<f64> = Vec::with_capacity(k);
            let mut c = rng.gen_range(-1.0..1.0);
            for _ in 0..k {
                centroids.push(c);
                c += rng.gen_range(0.05..1.0);
            }
            NeuronClusters {
                neuron,
                k,
                centroids,
                silhouette: None,
                inertia: 0.0,
            }
        })
        .collect();
    ClusterModel::new(ClusterConfig::new(k_max, 0), clusters)
}

/// A random subset of `neurons`, in canonical order.
pub fn random_subset<R: Rng>(rng: &mut R, neurons: &[NeuronId], max: usize) -> Vec<NeuronId> {
    let take = rng.gen_range(1..=max.min(neurons.len()));
    let mut chosen: Vec<NeuronId> = neurons.choose_multiple(rng, take).copied().collect();
    chosen.sort();
    chosen
}

pub mod oracle {
    use std::collections::BTreeSet;

    use tkcov::baselines::TrainBounds;
    use tkcov::cluster::ClusterModel;
    use tkcov::TraceSet;

    /// Hellinger distance through the Bhattacharyya coefficient.
    pub fn hellinger(p: &[f64], q: &[f64]) -> f64 {
        let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
        (1.0 - bc).max(0.0).sqrt()
    }

    /// Index of the nearest centroid, lowest index on ties, by linear scan.
    pub fn nearest(v: f64, centroids: &[f64]) -> usize {
        let mut best = 0;
        for (i, c) in centroids.iter().enumerate() {
            if (v - c).abs() < (v - centroids[best]).abs() {
                best = i;
            }
        }
        best
    }

    /// Covered combinations counted by walking the full Cartesian product and
    /// asking, for each tuple, whether some test row lands on it.
    pub fn covered_by_enumeration(test: &TraceSet, cm: &ClusterModel) -> u64 {
        let cols: Vec<usize> = cm
            .neurons
            .iter()
            .map(|n| test.column_index(n.neuron).unwrap())
            .collect();
        let ks: Vec<usize> = cm.neurons.iter().map(|n| n.k).collect();
        let rows: Vec<Vec<usize>> = test
            .iter_rows()
            .map(|row| {
                cols.iter()
                    .zip(&cm.neurons)
                    .map(|(&c, n)| nearest(row[c] as f64, &n.centroids))
                    .collect()
            })
            .collect();
        let mut tuple = vec![0usize; ks.len()];
        let mut covered = 0;
        loop {
            if rows.contains(&tuple) {
                covered += 1;
            }
            // odometer increment
            let mut i = 0;
            loop {
                if i == ks.len() {
                    return covered;
                }
                tuple[i] += 1;
                if tuple[i] < ks[i] {
                    break;
                }
                tuple[i] = 0;
                i += 1;
            }
        }
    }

    pub fn nc(test: &TraceSet, threshold: f32) -> f64 {
        let n = test.width();
        let hit = (0..n).filter(|&j| test.column(j).any(|v| v > threshold)).count();
        hit as f64 / n as f64
    }

    /// Sections tested one by one against their own edges.
    pub fn kmnc(test: &TraceSet, bounds: &TrainBounds, k: usize) -> f64 {
        let n = test.width();
        let mut hit = 0;
        for j in 0..n {
            let (lo, hi) = (bounds.low[j] as f64, bounds.high[j] as f64);
            for i in 0..k {
                let a = lo + (hi - lo) * i as f64 / k as f64;
                let b = lo + (hi - lo) * (i + 1) as f64 / k as f64;
                let inside = |v: f32| {
                    let v = v as f64;
                    if lo == hi {
                        i == 0 && v == lo
                    } else if i + 1 == k {
                        v >= a && v <= hi
                    } else {
                        v >= a && v < b
                    }
                };
                if test.column(j).any(inside) {
                    hit += 1;
                }
            }
        }
        hit as f64 / (n * k) as f64
    }

    pub fn nbc(test: &TraceSet, bounds: &TrainBounds) -> f64 {
        let n = test.width();
        let mut hit = 0;
        for j in 0..n {
            hit += test.column(j).any(|v| v < bounds.low[j]) as usize;
            hit += test.column(j).any(|v| v > bounds.high[j]) as usize;
        }
        hit as f64 / (2 * n) as f64
    }

    pub fn snac(test: &TraceSet, bounds: &TrainBounds) -> f64 {
        let n = test.width();
        let hit = (0..n).filter(|&j| test.column(j).any(|v| v > bounds.high[j])).count();
        hit as f64 / n as f64
    }

    /// A neuron is in its layer's top k for a row when fewer than k layer
    /// peers beat it, where a peer beats it by a larger value or an equal
    /// value at a lower column.
    pub fn tknc(test: &TraceSet, k: usize) -> f64 {
        let neurons = test.neurons();
        let mut hit = BTreeSet::new();
        for row in test.iter_rows() {
            for j in 0..neurons.len() {
                let beaten_by = (0..neurons.len())
                    .filter(|&i| neurons[i].layer == neurons[j].layer && i != j)
                    .filter(|&i| row[i] > row[j] || (row[i] == row[j] && i < j))
                    .count();
                if beaten_by < k {
                    hit.insert(j);
                }
            }
        }
        hit.len() as f64 / neurons.len() as f64
    }
}

/// Random traces over the same neurons as `like`, with 1..30 rows.
pub fn companion_traces<R: Rng>(rng: &mut R, like: &TraceSet) -> TraceSet {
    let rows = rng.gen_range(1..30);
    let t = random_traces(rng, rows, like.width(), -0.5, 2.0);
    TraceSet::new(like.neurons().to_vec(), rows, t.values().to_vec()).unwrap()
}
