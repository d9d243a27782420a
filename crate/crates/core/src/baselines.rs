//! Classic neuron-coverage criteria used as comparison baselines: neuron
//! coverage, k-multisection, boundary, strong-activation and top-k coverage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NeuronId;
use crate::trace::TraceSet;

pub const NC_THRESHOLD: f32 = 0.7;
pub const KMNC_SECTIONS: usize = 10;
pub const TKNC_TOP: usize = 3;

/// Per-neuron activation range observed on the training traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainBounds {
    pub neurons: Vec<NeuronId>,
    pub low: Vec<f32>,
    pub high: Vec<f32>,
}

impl TrainBounds {
    pub fn from_traces(train: &TraceSet) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyTraces);
        }
        let n = train.width();
        let mut low = vec![f32::INFINITY; n];
        let mut high = vec![f32::NEG_INFINITY; n];
        for row in train.iter_rows() {
            for ((lo, hi), &v) in low.iter_mut().zip(high.iter_mut()).zip(row) {
                *lo = lo.min(v);
                *hi = hi.max(v);
            }
        }
        Ok(TrainBounds {
            neurons: train.neurons().to_vec(),
            low,
            high,
        })
    }

    fn check(&self, test: &TraceSet) -> Result<()> {
        if self.neurons != test.neurons() {
            return Err(Error::NeuronSpaceMismatch(
                "training bounds and test traces cover different neurons".into(),
            ));
        }
        Ok(())
    }
}

/// Where an activation falls relative to a neuron's training range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Below,
    Section(usize),
    Above,
}

/// Lower edge of section `i` of `[low, high]` split in `k`.
pub fn section_edge(low: f32, high: f32, k: usize, i: usize) -> f64 {
    let (low, high) = (low as f64, high as f64);
    low + (high - low) * i as f64 / k as f64
}

/// Sections are `[edge_i, edge_{i+1})`, the last one closed. A zero-width
/// range is a single section hit only by the bound itself.
pub fn region(v: f32, low: f32, high: f32, k: usize) -> Region {
    if v < low {
        return Region::Below;
    }
    if v > high {
        return Region::Above;
    }
    if low == high {
        return Region::Section(0);
    }
    let x = v as f64;
    let (lo, hi) = (low as f64, high as f64);
    let mut i = (((x - lo) / (hi - lo)) * k as f64).floor() as usize;
    i = i.min(k - 1);
    // settle float rounding against the edges themselves
    while i > 0 && x < section_edge(low, high, k, i) {
        i -= 1;
    }
    while i + 1 < k && x >= section_edge(low, high, k, i + 1) {
        i += 1;
    }
    Region::Section(i)
}

/// Fraction of neurons with some activation above `threshold`.
pub fn nc(test: &TraceSet, threshold: f32) -> f64 {
    let mut hit = vec![false; test.width()];
    for row in test.iter_rows() {
        for (h, &v) in hit.iter_mut().zip(row) {
            *h |= v > threshold;
        }
    }
    fraction(hit.iter().filter(|&&h| h).count(), hit.len())
}

pub fn kmnc(test: &TraceSet, bounds: &TrainBounds, k: usize) -> Result<f64> {
    bounds.check(test)?;
    if k == 0 {
        return Err(Error::Config("KMNC needs at least one section".into()));
    }
    let n = test.width();
    let mut hit = vec![false; n * k];
    for row in test.iter_rows() {
        for (j, &v) in row.iter().enumerate() {
            if let Region::Section(i) = region(v, bounds.low[j], bounds.high[j], k) {
                hit[j * k + i] = true;
            }
        }
    }
    Ok(fraction(hit.iter().filter(|&&h| h).count(), n * k))
}

fn corner_hits(test: &TraceSet, bounds: &TrainBounds) -> (Vec<bool>, Vec<bool>) {
    let n = test.width();
    let (mut below, mut above) = (vec![false; n], vec![false; n]);
    for row in test.iter_rows() {
        for (j, &v) in row.iter().enumerate() {
            below[j] |= v < bounds.low[j];
            above[j] |= v > bounds.high[j];
        }
    }
    (below, above)
}

pub fn nbc(test: &TraceSet, bounds: &TrainBounds) -> Result<f64> {
    bounds.check(test)?;
    let (below, above) = corner_hits(test, bounds);
    let count = below.iter().chain(&above).filter(|&&h| h).count();
    Ok(fraction(count, 2 * test.width()))
}

pub fn snac(test: &TraceSet, bounds: &TrainBounds) -> Result<f64> {
    bounds.check(test)?;
    let (_, above) = corner_hits(test, bounds);
    Ok(fraction(above.iter().filter(|&&h| h).count(), test.width()))
}

/// Fraction of neurons ranked in the top `k` of their own layer for some input.
pub fn tknc(test: &TraceSet, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("TKNC needs k >= 1".into()));
    }
    let neurons = test.neurons();
    // contiguous column ranges per layer
    let mut layers: Vec<(usize, usize)> = Vec::new();
    for (j, id) in neurons.iter().enumerate() {
        match layers.last_mut() {
            Some((start, end)) if neurons[*start].layer == id.layer => *end = j + 1,
            _ => layers.push((j, j + 1)),
        }
    }
    let mut hit = vec![false; neurons.len()];
    let mut order: Vec<usize> = Vec::new();
    for row in test.iter_rows() {
        for &(start, end) in &layers {
            order.clear();
            order.extend(start..end);
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            for &j in order.iter().take(k) {
                hit[j] = true;
            }
        }
    }
    Ok(fraction(hit.iter().filter(|&&h| h).count(), neurons.len()))
}

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub nc_threshold: f32,
    pub kmnc_sections: usize,
    pub tknc_top: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            nc_threshold: NC_THRESHOLD,
            kmnc_sections: KMNC_SECTIONS,
            tknc_top: TKNC_TOP,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineScores {
    pub nc: f64,
    pub kmnc: f64,
    pub nbc: f64,
    pub snac: f64,
    pub tknc: f64,
}

pub fn all_baselines(test: &TraceSet, bounds: &TrainBounds, cfg: &BaselineConfig) -> Result<BaselineScores> {
    Ok(BaselineScores {
        nc: nc(test, cfg.nc_threshold),
        kmnc: kmnc(test, bounds, cfg.kmnc_sections)?,
        nbc: nbc(test, bounds)?,
        snac: snac(test, bounds)?,
        tknc: tknc(test, cfg.tknc_top)?,
    })
}
