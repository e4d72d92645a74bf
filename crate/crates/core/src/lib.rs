//! Graph classification over a shared network topology.
//!
//! The pipeline computes random-walk-with-restart node features over an
//! alpha grid, trains a graph attentional autoencoder with a classification
//! head on the pooled pathway embeddings, and emits evaluation metrics and
//! ranked predictions. A regularized logistic baseline shares the split and
//! metric machinery.

pub mod autodiff;
pub mod baseline;
pub mod diffusion;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod testkit;
pub mod training;

pub use error::{Error, Result};
pub use graph::{build_graph, load_supermodules, CompoundSet, SharedGraph, SupermoduleMap};
