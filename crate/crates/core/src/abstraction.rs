//! Preferred-input analysis: which neuron each input activates most, and
//! the per-neuron distribution over those inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NeuronId;
use crate::trace::TraceSet;

/// One row of the preferred-input matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxActivationRecord {
    pub input_index: usize,
    pub neuron: NeuronId,
    pub value: f32,
}

/// A neuron's normalized distribution over the inputs that activate it most.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDistribution {
    pub neuron: NeuronId,
    /// `(input_index, probability)`, ascending by input index, probabilities > 0.
    pub entries: Vec<(usize, f64)>,
    /// `(input_index, mean maximum activation)` for every preferred input.
    pub mean_activations: Vec<(usize, f64)>,
}

impl PreferenceDistribution {
    pub fn empty(neuron: NeuronId) -> Self {
        PreferenceDistribution {
            neuron,
            entries: Vec::new(),
            mean_activations: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn feature_length(&self) -> usize {
        feature_length(self)
    }

    pub fn probabilities(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|&(_, p)| p)
    }
}

pub type DistributionMap = BTreeMap<NeuronId, PreferenceDistribution>;

/// Index of the row maximum; ties go to the earliest column.
pub(crate) fn argmax(row: &[f32]) -> (usize, f32) {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    (best, row[best])
}

/// One record per input: its maximally activated neuron and that activation.
pub fn build_max_records(traces: &TraceSet) -> Result<Vec<MaxActivationRecord>> {
    if traces.is_empty() {
        return Err(Error::EmptyTraces);
    }
    let neurons = traces.neurons();
    Ok(traces
        .iter_rows()
        .enumerate()
        .map(|(input_index, row)| {
            let (col, value) = argmax(row);
            MaxActivationRecord {
                input_index,
                neuron: neurons[col],
                value,
            }
        })
        .collect())
}

/// Aggregates records into one distribution per neuron in `neurons`.
///
/// Repeated `(input, neuron)` records are averaged. Inputs whose mean maximum
/// is not positive carry no probability mass; a neuron left without positive
/// mass gets an empty distribution.
pub fn build_distributions(records: &[MaxActivationRecord], neurons: &[NeuronId]) -> DistributionMap {
    // neuron -> input -> (sum, count)
    let mut grouped: BTreeMap<NeuronId, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for r in records {
        let slot = grouped
            .entry(r.neuron)
            .or_default()
            .entry(r.input_index)
            .or_insert((0.0, 0));
        slot.0 += r.value as f64;
        slot.1 += 1;
    }

    let mut out = DistributionMap::new();
    for &neuron in neurons {
        let Some(inputs) = grouped.remove(&neuron) else {
            out.insert(neuron, PreferenceDistribution::empty(neuron));
            continue;
        };
        let mean_activations: Vec<(usize, f64)> = inputs
            .into_iter()
            .map(|(input, (sum, count))| (input, sum / count as f64))
            .collect();
        let mass: f64 = mean_activations.iter().map(|&(_, mu)| mu).filter(|&mu| mu > 0.0).sum();
        let entries = if mass > 0.0 {
            mean_activations
                .iter()
                .filter(|&&(_, mu)| mu > 0.0)
                .map(|&(input, mu)| (input, mu / mass))
                .collect()
        } else {
            Vec::new()
        };
        out.insert(
            neuron,
            PreferenceDistribution {
                neuron,
                entries,
                mean_activations,
            },
        );
    }
    out
}

/// Number of distinct preferred inputs with non-zero probability.
pub fn feature_length(d: &PreferenceDistribution) -> usize {
    d.entries.iter().filter(|&&(_, p)| p > 0.0).count()
}

/// Records and distributions for a whole trace set.
pub fn abstract_knowledge(traces: &TraceSet) -> Result<DistributionMap> {
    let records = build_max_records(traces)?;
    Ok(build_distributions(&records, traces.neurons()))
}
