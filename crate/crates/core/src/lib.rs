//! Transfer-knowledge coverage analysis for feedforward neural networks.
//!
//! The pipeline runs in four stages, each consuming [`trace::TraceSet`]s
//! rather than a live model:
//!
//! 1. [`abstraction`]: every input is attributed to its maximally activated
//!    neuron, and each neuron becomes a probability distribution over its
//!    preferred inputs.
//! 2. [`selection`]: neurons whose preference distribution barely moves between
//!    in-distribution and out-of-distribution data (Hellinger distance) and
//!    whose preferred-input count grows are kept as transfer-knowledge neurons.
//! 3. [`cluster`]: each selected neuron's training activations are clustered
//!    with 1-D k-means, picking k by silhouette score.
//! 4. [`cluster::tkc`]: a test set is scored by the fraction of centroid
//!    combinations its inputs reach.
//!
//! [`baselines`] provides the classic neuron-coverage criteria for comparison,
//! and [`model`] is a small inference runtime that turns a `DKNN` model file
//! plus a dataset into traces.

pub mod abstraction;
pub mod baselines;
pub mod cluster;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod selection;
pub mod trace;

pub use error::{Error, Result};
pub use model::{Model, NeuronId};
pub use trace::TraceSet;

/// Tool version embedded in every coverage report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
