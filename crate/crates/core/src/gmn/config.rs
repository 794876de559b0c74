use serde::{Deserialize, Serialize};

use crate::equivariant::{BlockConfig, RescaleVariant};
use crate::error::{Error, Result};
use crate::graph::Direction;
use crate::tensor::Pointwise;
use crate::zoo::{CanonMode, GroupKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutKind {
    /// DeepSets over canonicalized hidden vertices plus all i/o vertices.
    DeepsetsIo,
    /// Only the output vertices, concatenated.
    OutputConcat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Invariant,
    EquivariantEdit,
}

/// Alternative initial value for the edit-head step size.
pub const GAMMA_INIT_SMALL: f64 = 0.001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleGmnConfig {
    /// Widths `[d_0, …, d_L]` of the networks the model consumes.
    pub layer_dims: Vec<usize>,
    /// Raw edge feature width (1 for dense nets, `kh·kw` for CNNs).
    pub edge_in: usize,
    pub vertex_dim: usize,
    pub edge_dim: usize,
    /// Message-passing rounds.
    pub layers: usize,
    pub direction: Direction,
    pub group: GroupKind,
    pub canon: CanonMode,
    pub edge_updates: bool,
    pub pe_dim: usize,
    /// Feed positional encodings into messages and updates too.
    pub pe_in_messages: bool,
    pub readout: ReadoutKind,
    pub head: HeadKind,
    pub out_dim: usize,
    pub skip: bool,
    pub gamma_init: f64,
    pub rescale: RescaleVariant,
    /// Stacked layers inside each equivariant block.
    pub eq_depth: usize,
    pub mlp_hidden: usize,
    pub act: Pointwise,
    pub layer_norm: bool,
    /// Fixed factor applied to all raw vertex and edge features. A scalar
    /// commutes with every scaling symmetry.
    pub input_scale: f64,
}

impl Default for ScaleGmnConfig {
    fn default() -> Self {
        ScaleGmnConfig {
            layer_dims: vec![2, 8, 8, 1],
            edge_in: 1,
            vertex_dim: 8,
            edge_dim: 8,
            layers: 2,
            direction: Direction::Forward,
            group: GroupKind::Sign,
            canon: CanonMode::SignSymmetrize,
            edge_updates: true,
            pe_dim: 4,
            pe_in_messages: true,
            readout: ReadoutKind::DeepsetsIo,
            head: HeadKind::Invariant,
            out_dim: 2,
            skip: true,
            gamma_init: 0.01,
            rescale: RescaleVariant::Hadamard,
            eq_depth: 1,
            mlp_hidden: 16,
            act: Pointwise::Silu,
            layer_norm: false,
            input_scale: 1.0,
        }
    }
}

impl ScaleGmnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config("input networks need at least one layer".into()));
        }
        if self.vertex_dim == 0 || self.edge_dim == 0 || self.edge_in == 0 {
            return Err(Error::Config("widths must be positive".into()));
        }
        let ok = matches!(
            (self.group, self.canon),
            (GroupKind::Positive, CanonMode::NormDivide)
                | (GroupKind::Sign, CanonMode::SignSymmetrize)
                | (GroupKind::Sign, CanonMode::SignAbs)
                | (GroupKind::Trivial, _)
        );
        if !ok {
            return Err(Error::Config(format!(
                "canonicalization {:?} does not quotient the {} group",
                self.canon,
                self.group.name()
            )));
        }
        if self.head == HeadKind::EquivariantEdit && self.edge_in != 1 {
            return Err(Error::Config("the edit head supports dense networks only".into()));
        }
        Ok(())
    }

    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            canon: self.canon,
            hidden: self.mlp_hidden,
            act: self.act,
            layer_norm: self.layer_norm,
        }
    }

    pub fn is_bidirectional(&self) -> bool {
        self.direction == Direction::Bidirectional
    }
}
