//! Datapoint networks: dense nets, SIRENs and small CNNs, their symmetry
//! transforms, training routines and on-disk zoos.

mod activation;
mod cnn;
mod ffnn;
mod io;
mod orbit;
mod siren;
mod stats;

pub use activation::{ActivationDescriptor, ActivationKind, CanonMode, GroupKind};
pub use cnn::{
    apply_orbit_cnn, cnn_accuracy, cnn_forward, train_toy_cnn, BlobTask, CnnFit, CnnParams,
    CnnTrainConfig, ConvLayer,
};
pub use ffnn::{FfnnLayer, FfnnParams};
pub use io::{load_zoo, save_zoo, NetKind, ZooEntry, ZooManifest, ZooNet};
pub use orbit::{apply_orbit, LayerAction, OrbitElement, ScaleSampler, MIN_POSITIVE_SCALE};
pub use siren::{
    bias_shift, canonicalize_phases, grid_coords, signal_mse, siren_init, train_inr, InrFit,
    InrTrainConfig, Signal,
};
pub use stats::{stat_features, stat_features_cnn, summary, STAT_NAMES};
