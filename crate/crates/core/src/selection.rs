//! Transfer-knowledge neuron selection.
//!
//! A neuron is a candidate when its in-distribution and out-of-distribution
//! preference distributions are close (Hellinger distance inside a half-open
//! window) and its preferred-input count changes in an accepted direction.
//! The closest `p` percent of candidates are kept.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::abstraction::{argmax, DistributionMap, PreferenceDistribution};
use crate::error::{Error, Result};
use crate::model::NeuronId;
use crate::trace::TraceSet;

const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Hellinger distance between two probability vectors of equal length.
pub fn hellinger(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    for (name, v) in [("p", p), ("q", q)] {
        if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::NotNormalized(format!("{name} contains {x}")));
        }
        let total: f64 = v.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized(format!("{name} sums to {total}")));
        }
    }
    Ok(hellinger_unchecked(p, q))
}

fn hellinger_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let sq: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    (sq.sqrt() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Probability profiles of two distributions on a shared index space.
#[derive(Clone, Debug, PartialEq)]
pub enum AlignedSupports {
    Valid {
        p: Vec<f64>,
        q: Vec<f64>,
    },
    /// At least one side has no preferred inputs.
    Invalid,
}

/// Sorts each distribution's probabilities in descending order and zero-pads
/// the shorter profile. Input identities are discarded.
pub fn align_supports(d_id: &PreferenceDistribution, d_ood: &PreferenceDistribution) -> AlignedSupports {
    if d_id.is_empty() || d_ood.is_empty() {
        return AlignedSupports::Invalid;
    }
    let profile = |d: &PreferenceDistribution| {
        let mut v: Vec<f64> = d.probabilities().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    };
    let mut p = profile(d_id);
    let mut q = profile(d_ood);
    let len = p.len().max(q.len());
    p.resize(len, 0.0);
    q.resize(len, 0.0);
    AlignedSupports::Valid { p, q }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeChange {
    pub hd: f64,
    /// False when either distribution was empty; `hd` is then 0.
    pub valid: bool,
}

pub fn knowledge_change(d_id: &PreferenceDistribution, d_ood: &PreferenceDistribution) -> KnowledgeChange {
    match align_supports(d_id, d_ood) {
        AlignedSupports::Valid { p, q } => KnowledgeChange {
            hd: hellinger_unchecked(&p, &q),
            valid: true,
        },
        AlignedSupports::Invalid => KnowledgeChange { hd: 0.0, valid: false },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiversityType {
    Gained,
    Avoided,
    Stable,
}

impl fmt::Display for DiversityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiversityType::Gained => "gained",
            DiversityType::Avoided => "avoided",
            DiversityType::Stable => "stable",
        })
    }
}

impl FromStr for DiversityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gained" => Ok(DiversityType::Gained),
            "avoided" => Ok(DiversityType::Avoided),
            "stable" => Ok(DiversityType::Stable),
            other => Err(Error::Config(format!("unknown diversity type `{other}`"))),
        }
    }
}

pub fn classify_diversity(l_id: usize, l_ood: usize) -> DiversityType {
    match l_id.cmp(&l_ood) {
        std::cmp::Ordering::Less => DiversityType::Gained,
        std::cmp::Ordering::Greater => DiversityType::Avoided,
        std::cmp::Ordering::Equal => DiversityType::Stable,
    }
}

/// Distance used to measure knowledge change.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceMetric {
    #[default]
    Hellinger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub hd_low: f64,
    pub hd_high: f64,
    pub diversity: BTreeSet<DiversityType>,
    pub top_percent: f64,
    #[serde(default)]
    pub metric: DivergenceMetric,
}

impl SelectionConfig {
    /// Window (0.01, 0.05], gained neurons only.
    pub fn with_top_percent(top_percent: f64) -> Self {
        SelectionConfig {
            hd_low: 0.01,
            hd_high: 0.05,
            diversity: BTreeSet::from([DiversityType::Gained]),
            top_percent,
            metric: DivergenceMetric::Hellinger,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.hd_low) || !in_unit(self.hd_high) || self.hd_low >= self.hd_high {
            return Err(Error::Config(format!(
                "HD window ({}, {}] must satisfy 0 <= low < high <= 1",
                self.hd_low, self.hd_high
            )));
        }
        if !(self.top_percent > 0.0 && self.top_percent <= 100.0) {
            return Err(Error::Config(format!(
                "top percent {} outside (0, 100]",
                self.top_percent
            )));
        }
        if self.diversity.is_empty() {
            return Err(Error::Config("diversity filter is empty".into()));
        }
        Ok(())
    }

    fn in_window(&self, hd: f64) -> bool {
        hd > self.hd_low && hd <= self.hd_high
    }
}

/// Per-neuron knowledge change and diversity, before filtering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronAssessment {
    pub neuron: NeuronId,
    pub hd: f64,
    pub hd_valid: bool,
    pub kind: DiversityType,
    pub l_id: usize,
    pub l_ood: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TkNeuron {
    pub neuron: NeuronId,
    pub hd: f64,
    pub kind: DiversityType,
    pub l_id: usize,
    pub l_ood: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TkNeuronSet {
    pub config: SelectionConfig,
    /// Neurons that passed the window and diversity filters.
    pub candidates: usize,
    /// Ascending by HD, ties by neuron id.
    pub members: Vec<TkNeuron>,
}

impl TkNeuronSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn neurons(&self) -> Vec<NeuronId> {
        self.members.iter().map(|m| m.neuron).collect()
    }
}

pub fn assess_neurons(p_id: &DistributionMap, p_ood: &DistributionMap) -> Result<Vec<NeuronAssessment>> {
    if p_id.len() != p_ood.len() || p_id.keys().zip(p_ood.keys()).any(|(a, b)| a != b) {
        return Err(Error::NeuronSpaceMismatch(format!(
            "ID distributions cover {} neurons, OOD {}",
            p_id.len(),
            p_ood.len()
        )));
    }
    Ok(p_id
        .iter()
        .zip(p_ood.values())
        .map(|((&neuron, d_id), d_ood)| {
            let change = knowledge_change(d_id, d_ood);
            let (l_id, l_ood) = (d_id.feature_length(), d_ood.feature_length());
            NeuronAssessment {
                neuron,
                hd: change.hd,
                hd_valid: change.valid,
                kind: classify_diversity(l_id, l_ood),
                l_id,
                l_ood,
            }
        })
        .collect())
}

/// Number of members kept from `candidates` at `top_percent`.
pub fn top_count(candidates: usize, top_percent: f64) -> usize {
    let raw = top_percent * candidates as f64 / 100.0;
    // absorb representation error such as 10% of 30 = 3.0000000000000004
    let n = (raw - 1e-9).ceil().max(0.0) as usize;
    n.min(candidates)
}

pub fn select_from_assessments(assessments: &[NeuronAssessment], cfg: &SelectionConfig) -> Result<TkNeuronSet> {
    cfg.validate()?;
    let mut candidates: Vec<TkNeuron> = assessments
        .iter()
        .filter(|a| a.hd_valid && a.l_id > 0 && a.l_ood > 0)
        .filter(|a| cfg.in_window(a.hd) && cfg.diversity.contains(&a.kind))
        .map(|a| TkNeuron {
            neuron: a.neuron,
            hd: a.hd,
            kind: a.kind,
            l_id: a.l_id,
            l_ood: a.l_ood,
        })
        .collect();
    candidates.sort_by(|a, b| a.hd.total_cmp(&b.hd).then(a.neuron.cmp(&b.neuron)));
    let total = candidates.len();
    candidates.truncate(top_count(total, cfg.top_percent));
    Ok(TkNeuronSet {
        config: cfg.clone(),
        candidates: total,
        members: candidates,
    })
}

/// Selects transfer-knowledge neurons. An empty selection is returned as an
/// empty set; callers decide whether that is fatal.
pub fn select_tk(p_id: &DistributionMap, p_ood: &DistributionMap, cfg: &SelectionConfig) -> Result<TkNeuronSet> {
    cfg.validate()?;
    let assessments = assess_neurons(p_id, p_ood)?;
    select_from_assessments(&assessments, cfg)
}

/// Inputs whose maximally activated neuron is a TK neuron, strongest first.
pub fn select_augmentation_inputs(traces: &TraceSet, tk: &TkNeuronSet) -> Result<Vec<usize>> {
    let mut wanted = HashSet::with_capacity(tk.len());
    for m in &tk.members {
        let col = traces
            .column_index(m.neuron)
            .ok_or(Error::MissingNeuronColumn(m.neuron))?;
        wanted.insert(col);
    }
    let mut hits: Vec<(usize, f32)> = traces
        .iter_rows()
        .enumerate()
        .filter_map(|(k, row)| {
            let (col, value) = argmax(row);
            wanted.contains(&col).then_some((k, value))
        })
        .collect();
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(hits.into_iter().map(|(k, _)| k).collect())
}
