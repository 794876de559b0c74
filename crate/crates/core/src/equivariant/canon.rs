use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Binder, Mlp, ParamStore, Pointwise, Var};
use crate::zoo::CanonMode;

/// Hyperparameters shared by the invariant sub-networks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub canon: CanonMode,
    /// Hidden width of every MLP (one hidden layer).
    pub hidden: usize,
    pub act: Pointwise,
    /// Layer normalization inside the invariant MLPs only.
    pub layer_norm: bool,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            canon: CanonMode::SignSymmetrize,
            hidden: 16,
            act: Pointwise::Silu,
            layer_norm: false,
        }
    }
}

/// Maps every orbit of a vector under the group to one representative
/// (or, for symmetrization, to a group-averaged feature).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Canonicalizer {
    pub mode: CanonMode,
    /// Only for sign symmetrization: `x ↦ mlp(x) + mlp(−x)`.
    pub mlp: Option<Mlp>,
    pub in_dim: usize,
}

impl Canonicalizer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        mode: CanonMode,
        in_dim: usize,
        cfg: &BlockConfig,
        rng: &mut R,
    ) -> Self {
        let mlp = (mode == CanonMode::SignSymmetrize).then(|| {
            let mut m = Mlp::new(store, name, &[in_dim, cfg.hidden, in_dim], cfg.act, rng);
            m.layer_norm = cfg.layer_norm;
            m
        });
        Canonicalizer { mode, mlp, in_dim }
    }

    pub fn identity(in_dim: usize) -> Self {
        Canonicalizer {
            mode: CanonMode::Identity,
            mlp: None,
            in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.as_ref().map_or(self.in_dim, Mlp::out_dim)
    }

    /// Row-wise. A zero row under norm division maps to the zero row.
    pub fn forward(&self, b: &mut Binder, x: Var) -> Result<Var> {
        match self.mode {
            CanonMode::Identity => Ok(x),
            CanonMode::NormDivide => Ok(b.tape.row_normalize(x)),
            CanonMode::SignAbs => Ok(b.tape.abs(x)),
            CanonMode::SignSymmetrize => {
                let mlp = self.mlp.as_ref().expect("symmetrizer has an MLP");
                let pos = mlp.forward(b, x)?;
                let nx = b.tape.neg(x);
                let neg = mlp.forward(b, nx)?;
                b.tape.add(pos, neg)
            }
        }
    }
}
