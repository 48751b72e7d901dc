//! Dynamic graph condensation.
//!
//! A real discrete-time dynamic graph is compressed into a small synthetic
//! one: learnable node features, structure produced by a spiking
//! (leaky integrate-and-fire) generator, trained by matching class-wise
//! kernel embeddings of spatio-temporal state fields. A reference T-GCN is
//! included for pretraining, soft labels and evaluation.
//!
//! The numeric core is generic over [`Scalar`] (`f32` / `f64`); the aliases
//! below fix it to `f64`, which the pipeline uses throughout.

pub mod analysis;
pub mod checkpoint;
pub mod condense;
pub mod dgnn;
pub mod error;
pub mod gradflow;
pub mod graphstore;
pub mod matchloss;
pub mod scalar;
pub mod sparse;
pub mod spikegen;
pub mod statefield;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = gradflow::Tensor<f64>;
pub type Tape64 = gradflow::Tape<f64>;
pub type Graph = graphstore::DynamicGraph<f64>;
pub type Condensed = graphstore::CondensedGraph<f64>;
pub type Model = dgnn::TGCNModel<f64>;
pub type Generator = spikegen::SpikingGenerator<f64>;
pub type Field = statefield::StateField<f64>;
