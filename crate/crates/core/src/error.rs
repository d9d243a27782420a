use std::io;

use thiserror::Error;

use crate::model::NeuronId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed model header: {0}")]
    MalformedHeader(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported layer kind `{0}`")]
    UnsupportedLayerKind(String),

    #[error("input contains a non-finite value at position {0}")]
    NonFiniteInput(usize),

    #[error("malformed trace file: {0}")]
    MalformedTrace(String),

    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("dataset `{0}` is empty")]
    EmptyDataset(String),

    #[error("trace set has no rows")]
    EmptyTraces,

    #[error("invalid dataset manifest: {0}")]
    InvalidManifest(String),

    #[error("probability vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("probability vector is not normalized: {0}")]
    NotNormalized(String),

    #[error("clustering is degenerate: {0}")]
    DegenerateClustering(String),

    #[error("trace set has no column for neuron {0}")]
    MissingNeuronColumn(NeuronId),

    #[error("neuron spaces differ: {0}")]
    NeuronSpaceMismatch(String),

    #[error("no transfer-knowledge candidates satisfy the selection config")]
    NoCandidates,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::LengthMismatch(..)
            | Error::NotNormalized(_)
            | Error::NeuronSpaceMismatch(_)
            | Error::MissingNeuronColumn(_)
            | Error::EmptyDataset(_)
            | Error::EmptyTraces
            | Error::ShapeMismatch(_)
            | Error::NonFiniteInput(_)
            | Error::InvalidManifest(_) => 2,
            Error::Io { .. }
            | Error::Json { .. }
            | Error::MalformedHeader(_)
            | Error::UnsupportedLayerKind(_)
            | Error::MalformedTrace(_)
            | Error::VersionUnsupported(_)
            | Error::ChecksumMismatch { .. } => 3,
            Error::NoCandidates => 4,
            Error::DegenerateClustering(_) | Error::Invariant(_) => 5,
        }
    }
}
