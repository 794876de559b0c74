//! The graph metanetwork: initialization, message passing, readout and
//! the editing head.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{load_checkpoint, load_store_config, load_store_into, save_checkpoint, save_store};
pub use config::{HeadKind, ReadoutKind, ScaleGmnConfig, GAMMA_INIT_SMALL};
pub use model::{GmnOutput, ScaleGmn};
