//! Scale invariant and scale equivariant building blocks.
//!
//! Every block acts row-wise: each row of an input is one vector, and a
//! group element multiplies a whole row by one scalar.

mod canon;
mod nets;

pub use canon::{BlockConfig, Canonicalizer};
pub use nets::{ReScaleEqNet, RescaleVariant, ScaleEqNet, ScaleInvNet};

#[cfg(test)]
mod tests;
