//! Datasets and activation traces.
//!
//! A dataset is a JSON manifest next to a raw little-endian f32 tensor blob.
//! A trace set is the dense `inputs × neurons` activation matrix, stored in
//! the `DKTR` v1 format:
//!
//! ```text
//! "DKTR" | u32 version | u32 N | u64 C | N × (u16 layer, u32 unit)
//!        | C × N f32 row-major | u32 CRC32C of everything before it
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, NeuronId, Shape};

pub const TRACE_MAGIC: &[u8; 4] = b"DKTR";
pub const TRACE_VERSION: u32 = 1;

const FIXED_HEADER: usize = 4 + 4 + 4 + 8;
const NEURON_ENTRY: usize = 2 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetRole {
    #[serde(rename = "id-train")]
    IdTrain,
    #[serde(rename = "id-test")]
    IdTest,
    #[serde(rename = "ood")]
    Ood,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub role: DatasetRole,
    pub input_shape: Shape,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u32>>,
    /// Tensor blob path, relative to the manifest's directory.
    pub tensor_file: PathBuf,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if let Some(labels) = &self.labels {
            if labels.len() != self.count {
                return Err(Error::InvalidManifest(format!(
                    "{}: {} labels for {} inputs",
                    self.name,
                    labels.len(),
                    self.count
                )));
            }
        }
        Ok(())
    }

    pub fn blob_len(&self) -> usize {
        self.count * self.input_shape.len() * 4
    }
}

/// A loaded dataset: manifest plus the input tensors, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    inputs: Vec<f32>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        role: DatasetRole,
        input_shape: Shape,
        inputs: Vec<f32>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        let width = input_shape.len();
        if !inputs.len().is_multiple_of(width) {
            return Err(Error::ShapeMismatch(format!(
                "{} values is not a multiple of the input size {width}",
                inputs.len()
            )));
        }
        let name = name.into();
        let manifest = DatasetManifest {
            tensor_file: PathBuf::from(format!("{name}.f32")),
            name,
            role,
            input_shape,
            count: inputs.len() / width,
            labels,
        };
        manifest.validate()?;
        Ok(Dataset { manifest, inputs })
    }

    /// Loads a manifest and its tensor blob.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = fs::read(manifest_path).map_err(|e| Error::io(format!("reading {}", manifest_path.display()), e))?;
        let manifest: DatasetManifest = serde_json::from_slice(&text)
            .map_err(|e| Error::json(format!("parsing {}", manifest_path.display()), e))?;
        manifest.validate()?;
        let blob_path = manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&manifest.tensor_file);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(format!("reading {}", blob_path.display()), e))?;
        if blob.len() != manifest.blob_len() {
            return Err(Error::InvalidManifest(format!(
                "{}: tensor blob has {} bytes, manifest implies {}",
                manifest.name,
                blob.len(),
                manifest.blob_len()
            )));
        }
        let inputs = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Dataset { manifest, inputs })
    }

    /// Writes `<dir>/<name>.json` and the tensor blob it names. Returns the manifest path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let blob_path = dir.join(&self.manifest.tensor_file);
        let mut blob = Vec::with_capacity(self.inputs.len() * 4);
        for v in &self.inputs {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&blob_path, blob).map_err(|e| Error::io(format!("writing {}", blob_path.display()), e))?;
        let manifest_path = dir.join(format!("{}.json", self.manifest.name));
        let json = serde_json::to_vec_pretty(&self.manifest).map_err(|e| Error::json("encoding manifest", e))?;
        fs::write(&manifest_path, json).map_err(|e| Error::io(format!("writing {}", manifest_path.display()), e))?;
        Ok(manifest_path)
    }

    pub fn len(&self) -> usize {
        self.manifest.count
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.count == 0
    }

    pub fn input(&self, k: usize) -> &[f32] {
        let w = self.manifest.input_shape.len();
        &self.inputs[k * w..(k + 1) * w]
    }

    pub fn inputs(&self) -> &[f32] {
        &self.inputs
    }
}

/// Dense activation matrix: one row per input, one column per neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    neurons: Vec<NeuronId>,
    rows: usize,
    values: Vec<f32>,
}

impl TraceSet {
    pub fn new(neurons: Vec<NeuronId>, rows: usize, values: Vec<f32>) -> Result<Self> {
        if neurons.is_empty() {
            return Err(Error::MalformedTrace("trace set has no neurons".into()));
        }
        if let Some(w) = neurons.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::MalformedTrace(format!(
                "neurons not in canonical order: {} before {}",
                w[0], w[1]
            )));
        }
        if rows.checked_mul(neurons.len()) != Some(values.len()) {
            return Err(Error::MalformedTrace(format!(
                "{} values for a {rows} x {} matrix",
                values.len(),
                neurons.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::MalformedTrace(format!(
                "non-finite activation at row {}, column {}",
                pos / neurons.len(),
                pos % neurons.len()
            )));
        }
        Ok(TraceSet { neurons, rows, values })
    }

    pub fn neurons(&self) -> &[NeuronId] {
        &self.neurons
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn width(&self) -> usize {
        self.neurons.len()
    }

    pub fn row(&self, k: usize) -> &[f32] {
        let n = self.neurons.len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.neurons.len())
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn column_index(&self, neuron: NeuronId) -> Option<usize> {
        self.neurons.binary_search(&neuron).ok()
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = f32> + '_ {
        self.iter_rows().map(move |r| r[col])
    }

    /// Rows at `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> TraceSet {
        let mut values = Vec::with_capacity(indices.len() * self.width());
        for &k in indices {
            values.extend_from_slice(self.row(k));
        }
        TraceSet {
            neurons: self.neurons.clone(),
            rows: indices.len(),
            values,
        }
    }

    /// This trace set's rows followed by `other`'s.
    pub fn concat(&self, other: &TraceSet) -> Result<TraceSet> {
        if self.neurons != other.neurons {
            return Err(Error::NeuronSpaceMismatch(
                "cannot concatenate trace sets over different neurons".into(),
            ));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(TraceSet {
            neurons: self.neurons.clone(),
            rows: self.rows + other.rows,
            values,
        })
    }

    /// Encodes as `DKTR` v1.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.neurons.len();
        let mut out = Vec::with_capacity(FIXED_HEADER + n * NEURON_ENTRY + self.values.len() * 4 + 4);
        out.extend_from_slice(TRACE_MAGIC);
        out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        for id in &self.neurons {
            out.extend_from_slice(&id.layer.to_le_bytes());
            out.extend_from_slice(&id.unit.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32c::crc32c(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Decodes and validates a `DKTR` v1 buffer.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FIXED_HEADER + 4 {
            return Err(Error::MalformedTrace(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[0..4] != TRACE_MAGIC {
            return Err(Error::MalformedTrace("missing DKTR magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != TRACE_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let expected = usize::try_from(rows)
            .ok()
            .and_then(|c| c.checked_mul(n))
            .and_then(|cells| cells.checked_mul(4))
            .and_then(|b| b.checked_add(FIXED_HEADER + n * NEURON_ENTRY + 4))
            .ok_or_else(|| Error::MalformedTrace("matrix dimensions overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::MalformedTrace(format!(
                "expected {expected} bytes for {rows} x {n}, found {}",
                bytes.len()
            )));
        }
        let body = &bytes[..expected - 4];
        let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
        let computed = crc32c::crc32c(body);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        let table = &body[FIXED_HEADER..FIXED_HEADER + n * NEURON_ENTRY];
        let neurons = table
            .chunks_exact(NEURON_ENTRY)
            .map(|e| {
                NeuronId::new(
                    u16::from_le_bytes(e[0..2].try_into().unwrap()),
                    u32::from_le_bytes(e[2..6].try_into().unwrap()),
                )
            })
            .collect();
        let values = body[FIXED_HEADER + n * NEURON_ENTRY..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        TraceSet::new(neurons, rows as usize, values)
    }
}

pub fn write_trace<W: Write>(trace: &TraceSet, mut sink: W) -> Result<()> {
    sink.write_all(&trace.to_bytes())
        .map_err(|e| Error::io("writing trace", e))
}

pub fn read_trace<R: Read>(mut source: R) -> Result<TraceSet> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("reading trace", e))?;
    TraceSet::from_bytes(&bytes)
}

pub fn read_trace_file(path: &Path) -> Result<TraceSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    TraceSet::from_bytes(&bytes)
}

pub fn write_trace_file(trace: &TraceSet, path: &Path) -> Result<()> {
    fs::write(path, trace.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Runs `model` over every input of `dataset`. Rows are computed in parallel
/// and assembled in input order.
pub fn generate_traces(model: &Model, dataset: &Dataset) -> Result<TraceSet> {
    if dataset.manifest.input_shape != model.input_shape() {
        return Err(Error::ShapeMismatch(format!(
            "dataset `{}` has input shape {}, model expects {}",
            dataset.manifest.name,
            dataset.manifest.input_shape,
            model.input_shape()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset(dataset.manifest.name.clone()));
    }
    let rows: Vec<Vec<f32>> = (0..dataset.len())
        .into_par_iter()
        .map(|k| model.forward(dataset.input(k)).map(|a| a.neurons))
        .collect::<Result<_>>()?;
    let values = rows.concat();
    TraceSet::new(model.neurons(), dataset.len(), values)
}
