use rand::Rng;
use serde::{Deserialize, Serialize};

use super::canon::{BlockConfig, Canonicalizer};
use crate::error::{Error, Result};
use crate::tensor::{Binder, Linear, Mlp, ParamStore, Var};

/// `ρ(canon(x_1), …, canon(x_n), p)`: invariant to independent group
/// actions on each slot; `p` enters unchanged.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaleInvNet {
    pub canons: Vec<Canonicalizer>,
    pub aug_dim: usize,
    pub rho: Mlp,
}

impl ScaleInvNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        slot_dims: &[usize],
        aug_dim: usize,
        out_dim: usize,
        cfg: &BlockConfig,
        rng: &mut R,
    ) -> Self {
        let canons: Vec<Canonicalizer> = slot_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| Canonicalizer::new(store, &format!("{name}.canon{i}"), cfg.canon, d, cfg, rng))
            .collect();
        let width: usize = canons.iter().map(Canonicalizer::out_dim).sum::<usize>() + aug_dim;
        let mut rho = Mlp::new(store, &format!("{name}.rho"), &[width, cfg.hidden, out_dim], cfg.act, rng);
        rho.layer_norm = cfg.layer_norm;
        ScaleInvNet {
            canons,
            aug_dim,
            rho,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.rho.out_dim()
    }

    pub fn forward(&self, b: &mut Binder, slots: &[Var], aug: Option<Var>) -> Result<Var> {
        if slots.len() != self.canons.len() {
            return Err(Error::Config(format!(
                "invariant net expects {} slots, got {}",
                self.canons.len(),
                slots.len()
            )));
        }
        let mut parts = Vec::with_capacity(slots.len() + 1);
        for (c, &x) in self.canons.iter().zip(slots) {
            parts.push(c.forward(b, x)?);
        }
        push_aug(b, &mut parts, aug, self.aug_dim)?;
        let z = b.tape.concat_cols(&parts)?;
        self.rho.forward(b, z)
    }
}

fn push_aug(b: &mut Binder, parts: &mut Vec<Var>, aug: Option<Var>, aug_dim: usize) -> Result<()> {
    match aug {
        Some(p) if aug_dim > 0 => {
            let got = b.tape.value(p).cols();
            if got != aug_dim {
                return Err(Error::Config(format!(
                    "augmented input has width {got}, expected {aug_dim}"
                )));
            }
            parts.push(p);
        }
        None if aug_dim > 0 => {
            return Err(Error::Config("augmented input missing".into()));
        }
        _ => {}
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EqLayer {
    gammas: Vec<Linear>,
    inv: ScaleInvNet,
}

/// Per slot `Γ_i x_i ⊙ ScaleInv(x_1, …, x_n, p)_i`, stacked `K` times.
/// With `aug_dim > 0` this is the augmented variant: `p` reaches every
/// invariant block through an identity canonicalizer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaleEqNet {
    layers: Vec<EqLayer>,
    out_dims: Vec<usize>,
}

impl ScaleEqNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dims: &[usize],
        out_dims: &[usize],
        aug_dim: usize,
        depth: usize,
        cfg: &BlockConfig,
        rng: &mut R,
    ) -> Self {
        assert_eq!(in_dims.len(), out_dims.len(), "one output width per slot");
        let mut dims = in_dims.to_vec();
        let layers = (0..depth.max(1))
            .map(|k| {
                let gammas = dims
                    .iter()
                    .zip(out_dims)
                    .enumerate()
                    .map(|(i, (&a, &o))| {
                        Linear::new(store, &format!("{name}.{k}.gamma{i}"), a, o, false, rng)
                    })
                    .collect();
                let total: usize = out_dims.iter().sum();
                let inv = ScaleInvNet::new(store, &format!("{name}.{k}.inv"), &dims, aug_dim, total, cfg, rng);
                // gates start near 1 so stacked layers neither vanish nor explode
                if let Some(id) = inv.rho.layers.last().and_then(|l| l.bias) {
                    store.get_mut(id).data_mut().iter_mut().for_each(|v| *v += 1.0);
                }
                dims = out_dims.to_vec();
                EqLayer { gammas, inv }
            })
            .collect();
        ScaleEqNet {
            layers,
            out_dims: out_dims.to_vec(),
        }
    }

    pub fn out_dims(&self) -> &[usize] {
        &self.out_dims
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Linear maps and invariant block of layer `k`, for hand-wiring.
    pub fn layer_parts(&self, k: usize) -> (&[Linear], &ScaleInvNet) {
        (&self.layers[k].gammas, &self.layers[k].inv)
    }

    pub fn forward(&self, b: &mut Binder, xs: &[Var], aug: Option<Var>) -> Result<Vec<Var>> {
        let mut cur = xs.to_vec();
        for layer in &self.layers {
            if cur.len() != layer.gammas.len() {
                return Err(Error::Config(format!(
                    "equivariant net expects {} slots, got {}",
                    layer.gammas.len(),
                    cur.len()
                )));
            }
            let inv = layer.inv.forward(b, &cur, aug)?;
            let mut next = Vec::with_capacity(cur.len());
            let mut at = 0;
            for (g, &x) in layer.gammas.iter().zip(&cur) {
                let gx = g.forward(b, x)?;
                let gate = b.tape.slice_cols(inv, at, g.out_dim)?;
                at += g.out_dim;
                next.push(b.tape.mul(gx, gate)?);
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Single-slot convenience.
    pub fn forward1(&self, b: &mut Binder, x: Var, aug: Option<Var>) -> Result<Var> {
        Ok(self.forward(b, &[x], aug)?.remove(0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleVariant {
    Hadamard,
    Outer,
}

/// `g(q_1 x_1, …, q_n x_n) = (∏ q_i) g(x_1, …, x_n)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ReScaleEqNet {
    /// `⊙_i Γ_i x_i`.
    Hadamard { gammas: Vec<Linear> },
    /// `ScaleEq(vec(x_1 ⊗ … ⊗ x_n))`.
    Outer { eq: ScaleEqNet },
}

impl ReScaleEqNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        variant: RescaleVariant,
        in_dims: &[usize],
        out_dim: usize,
        cfg: &BlockConfig,
        rng: &mut R,
    ) -> Self {
        match variant {
            RescaleVariant::Hadamard => ReScaleEqNet::Hadamard {
                gammas: in_dims
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| Linear::new(store, &format!("{name}.gamma{i}"), d, out_dim, false, rng))
                    .collect(),
            },
            RescaleVariant::Outer => {
                let prod: usize = in_dims.iter().product();
                ReScaleEqNet::Outer {
                    eq: ScaleEqNet::new(store, &format!("{name}.eq"), &[prod], &[out_dim], 0, 1, cfg, rng),
                }
            }
        }
    }

    pub fn forward(&self, b: &mut Binder, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Config("rescale net needs at least one input".into()));
        }
        match self {
            ReScaleEqNet::Hadamard { gammas } => {
                if gammas.len() != xs.len() {
                    return Err(Error::Config(format!(
                        "rescale net expects {} inputs, got {}",
                        gammas.len(),
                        xs.len()
                    )));
                }
                let mut acc = gammas[0].forward(b, xs[0])?;
                for (g, &x) in gammas.iter().zip(xs).skip(1) {
                    let gx = g.forward(b, x)?;
                    acc = b.tape.mul(acc, gx)?;
                }
                Ok(acc)
            }
            ReScaleEqNet::Outer { eq } => {
                let mut acc = xs[0];
                for &x in &xs[1..] {
                    acc = b.tape.row_outer(acc, x)?;
                }
                eq.forward1(b, acc, None)
            }
        }
    }
}
