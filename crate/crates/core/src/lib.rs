//! Fair node classification on graphs without access to the sensitive attribute.
//!
//! An encoder trained on the task labels yields low-dimensional pseudo-sensitive
//! attributes. A GNN classifier is then fine-tuned to keep each node's
//! embedding close to real counterfactual nodes that share its (pseudo-)label
//! but sit on the other side of a pseudo-attribute, with per-attribute weights
//! re-solved in closed form every epoch.

pub mod counterfactual;
pub mod error;
pub mod experiment;
pub mod fairness;
pub mod gnn;
pub mod graph;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod pseudo;
pub mod theory;

pub use error::{Error, Result};
pub use fairness::{derive_seed, TrainConfig};
pub use graph::{Graph, Split, TrainingGraph};
pub use matrix::DenseMatrix;
