//! Independent subnet training (IST) for dense feedforward networks on a
//! simulated multi-worker cluster.
//!
//! - [`nn`]: networks, backpropagation, SGD and the per-neuron standardizer.
//! - [`mask`]: neuron-to-site membership plans.
//! - [`partition`]: disjoint per-site weight shards and their reassembly.
//! - [`cluster`]: IST, data-parallel, local-SGD and single-worker training
//!   with exact float ledgers.
//! - [`cost`]: closed-form traffic and FLOP counts.
//! - [`gdci`]: gradient descent with compressed iterates and its bounds.
//! - [`data`], [`cli`]: datasets and the experiment runner.

pub mod cli;
pub mod cluster;
pub mod cost;
pub mod data;
pub mod error;
pub mod exec;
pub mod gdci;
pub mod linalg;
pub mod mask;
pub mod nn;
pub mod partition;
pub mod rng;

pub use error::{IstError, Result};
