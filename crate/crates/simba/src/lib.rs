//! SIMBA: size-imbalanced graph classification.
//!
//! The pipeline has three stages: a size-invariant graph encoder
//! (message passing plus attentive readout at every layer), a kNN
//! "graphs-to-graph" abstraction that propagates features between similar
//! graphs, and an energy-based re-weighting of training instances driven
//! by belief propagation over the same abstraction.
//!
//! Modules:
//! - [`data`]: TUDataset parsing, size statistics, splits, synthetic sets
//! - [`tensor`] / [`autodiff`] / [`params`] / [`optim`]: the numeric core
//! - [`encoder`]: GIN/GCN/SAGE layers, attentive readout, multi-level pooling
//! - [`g2g`]: kNN abstraction over graph embeddings and its propagation
//! - [`energy`]: free energies, energy propagation, cosine-annealed weights
//! - [`metrics`]: accuracy, macro-F1, central moment discrepancy
//! - [`model`] / [`train`]: the full model, training loop and evaluation
//! - [`cli`]: the `simba` command-line surface

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod energy;
pub mod error;
pub mod g2g;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Result, SimbaError};
