//! Zoo synthesis, metanetwork training and evaluation, and canonical forms.

mod canonical;
mod data;
mod metanet;
mod train;
mod zoogen;

pub use canonical::{canonicalize, CanonicalForm, UNIT_NORM_TOL};
pub use data::{batches, split_indices, Splits};
pub use metanet::{MetaNet, ModelSpec, NetVars};
pub use train::{
    evaluate, orbit_copy, predict, train, transform_net, ExperimentConfig, MetricRow, ModelKind, Task,
    TrainOutcome, TrainSummary,
};
pub use zoogen::{
    dilate, generate_zoo, shape_signal, CnnZooConfig, GeneratedZoo, InrZooConfig, SkippedFit, ZooGenConfig,
    ZooItem, ZooKind,
};
