//! Bayesian relational learning over multi-view node-attributed graphs.
//!
//! The crate infers cross-view interaction graphs from per-view graphs whose
//! nodes share a sample dimension. It bundles a small reverse-mode autodiff
//! engine, the graph and dataset types, the variational model and its
//! training loop, evaluation metrics, a synthetic generator and a Spearman
//! baseline.

pub mod adam;
pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod srca;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{seeded_rng, SeededRng, Tensor};
