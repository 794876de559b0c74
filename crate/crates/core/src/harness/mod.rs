//! Executable symmetry checks: block properties, orbit certificates,
//! function preservation, the forward/backward simulation construction and
//! rank correlation.

mod blocks;
mod certify;
mod kendall;
mod preserve;
mod simulate;

pub use blocks::{block_property_suite, rel_err, sample_multiplier, BlockCheck};
pub use certify::{
    certify_equivariance, certify_invariance, CertifyConfig, EditModel, InvariantModel, NetSampler,
    SymmetryReport,
};
pub use kendall::{kendall_tau, kendall_tau_a, pair_counts, pair_counts_brute, PairCounts};
pub use preserve::check_function_preservation;
pub use simulate::{reference_pass, simulate_ffnn, SimulatedPass, Simulation, SimulationState};
