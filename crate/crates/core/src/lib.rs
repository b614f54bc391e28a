//! Temporal transaction graphs, node embeddings and imbalanced classification
//! for anti-money-laundering case triage.

pub mod classify;
pub mod embed;
pub mod error;
pub mod evalx;
pub mod mathkernel;
pub mod synthgen;
pub mod txgraph;

pub use error::{Error, Result};
