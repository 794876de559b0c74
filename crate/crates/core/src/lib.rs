//! Scale-equivariant graph metanetworks.
//!
//! Networks whose inputs are the parameters of other networks, treated as
//! graphs of neurons and weights. Every learned component respects the
//! permutation and scaling (or sign) symmetries of the input networks, so
//! two parameter vectors that compute the same function are mapped to the
//! same embedding, or to correspondingly transformed outputs.
//!
//! Crate layout:
//! - [`tensor`]: dense arrays, reverse-mode autodiff, Adam, gradient checking.
//! - [`zoo`]: the datapoint networks (MLPs, SIRENs, small CNNs), their
//!   symmetry transforms and zoo synthesis.
//! - [`graph`]: conversion of a network into a parameter graph.
//! - [`equivariant`]: scale invariant / equivariant building blocks.
//! - [`gmn`]: the metanetwork itself.
//! - [`baselines`]: symmetry-unaware metanetworks used for comparison.
//! - [`harness`]: symmetry certification, the forward/backward simulation
//!   construction, rank metrics.
//! - [`experiment`]: training and evaluation loops shared by the CLI and tests.

pub mod baselines;
pub mod equivariant;
pub mod error;
pub mod experiment;
pub mod gmn;
pub mod graph;
pub mod harness;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
