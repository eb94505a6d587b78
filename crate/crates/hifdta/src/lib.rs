//! Hierarchical drug-target affinity prediction.
//!
//! The crate is layered bottom-up: `tensor` is a self-contained reverse-mode
//! autodiff kernel; `chem` parses SMILES into featurized molecular graphs and
//! junction trees; `protein` builds residue graphs from embeddings and contact
//! maps; `model` assembles the dual-pathway encoders, fusion and predictor;
//! `data`, `metrics` and `train` form the experiment harness.

pub mod chem;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod protein;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
