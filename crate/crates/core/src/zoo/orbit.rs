use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::activation::GroupKind;
use super::ffnn::{FfnnLayer, FfnnParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Permutation and diagonal scaling of one hidden layer.
///
/// Convention: the transformed layer's neuron `i` is the original neuron
/// `perm[i]`, rescaled by `scale[perm[i]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAction {
    pub perm: Vec<usize>,
    pub scale: Vec<f64>,
}

impl LayerAction {
    pub fn identity(n: usize) -> Self {
        LayerAction {
            perm: (0..n).collect(),
            scale: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Multiplier applied to transformed neuron `i`.
    pub fn factor(&self, i: usize) -> f64 {
        self.scale[self.perm[i]]
    }

    fn check_perm(&self) -> Result<()> {
        let mut seen = vec![false; self.perm.len()];
        for &p in &self.perm {
            if p >= seen.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidNetwork(format!(
                    "{:?} is not a permutation",
                    self.perm
                )));
            }
        }
        if self.scale.len() != self.perm.len() {
            return Err(Error::InvalidNetwork("scale and permutation lengths differ".into()));
        }
        Ok(())
    }
}

/// A symmetry of a network with widths `d_0..d_L`: one action per hidden
/// layer; the input and output layers are always fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitElement {
    pub hidden: Vec<LayerAction>,
}

/// Distribution of the diagonal part of sampled orbit elements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleSampler {
    None,
    /// Uniform ±1.
    Sign,
    /// i.i.d. `Exponential(lambda)`.
    Positive { lambda: f64 },
}

impl ScaleSampler {
    pub fn for_group(g: GroupKind, lambda: f64) -> Self {
        match g {
            GroupKind::Positive => ScaleSampler::Positive { lambda },
            GroupKind::Sign => ScaleSampler::Sign,
            GroupKind::Trivial => ScaleSampler::None,
        }
    }
}

/// Entries below this are redrawn so every multiplier stays invertible.
pub const MIN_POSITIVE_SCALE: f64 = 1e-6;

impl OrbitElement {
    /// Identity for widths `[d_0, …, d_L]`.
    pub fn identity(dims: &[usize]) -> Self {
        OrbitElement {
            hidden: hidden_widths(dims).iter().map(|&n| LayerAction::identity(n)).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        sampler: ScaleSampler,
        permute: bool,
        dims: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let exp = match sampler {
            ScaleSampler::Positive { lambda } => {
                let e = Exp::new(lambda).ok().filter(|_| lambda > 0.0 && lambda.is_finite());
                Some(e.ok_or_else(|| {
                    Error::Config(format!("exponential rate must be positive, got {lambda}"))
                })?)
            }
            _ => None,
        };
        let hidden = hidden_widths(dims)
            .iter()
            .map(|&n| {
                let mut perm: Vec<usize> = (0..n).collect();
                if permute {
                    perm.shuffle(rng);
                }
                let scale = (0..n)
                    .map(|_| match (sampler, &exp) {
                        (ScaleSampler::Sign, _) => {
                            if rng.random_bool(0.5) {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                        (ScaleSampler::Positive { .. }, Some(e)) => loop {
                            let v: f64 = e.sample(rng);
                            if v >= MIN_POSITIVE_SCALE {
                                break v;
                            }
                        },
                        _ => 1.0,
                    })
                    .collect();
                LayerAction { perm, scale }
            })
            .collect();
        Ok(OrbitElement { hidden })
    }

    /// The element equivalent to applying `self` and then `then`.
    pub fn compose(&self, then: &OrbitElement) -> Result<OrbitElement> {
        if self.hidden.len() != then.hidden.len() {
            return Err(Error::InvalidNetwork("orbit depths differ".into()));
        }
        let hidden = self
            .hidden
            .iter()
            .zip(&then.hidden)
            .map(|(a, b)| {
                let n = a.len();
                let perm: Vec<usize> = (0..n).map(|i| a.perm[b.perm[i]]).collect();
                let mut inv = vec![0; n];
                for (i, &p) in a.perm.iter().enumerate() {
                    inv[p] = i;
                }
                let scale = (0..n).map(|k| a.scale[k] * b.scale[inv[k]]).collect();
                LayerAction { perm, scale }
            })
            .collect();
        Ok(OrbitElement { hidden })
    }

    /// Checks widths and group membership against `net`.
    pub fn check(&self, net: &FfnnParams) -> Result<()> {
        let groups: Vec<GroupKind> = (1..net.num_layers()).map(|l| net.hidden_group(l)).collect();
        self.check_against(&net.layer_dims(), &groups)
    }

    /// `groups[l - 1]` is the group acting on hidden layer `l`.
    pub fn check_against(&self, dims: &[usize], groups: &[GroupKind]) -> Result<()> {
        let widths = hidden_widths(dims);
        if widths.len() != self.hidden.len() {
            return Err(Error::InvalidNetwork(format!(
                "orbit has {} hidden layers, network has {}",
                self.hidden.len(),
                widths.len()
            )));
        }
        for (l, (act, &n)) in self.hidden.iter().zip(&widths).enumerate() {
            if act.len() != n {
                return Err(Error::InvalidNetwork(format!(
                    "orbit layer {} has width {}, network {}",
                    l + 1,
                    act.len(),
                    n
                )));
            }
            act.check_perm()?;
            let group = groups[l];
            for (neuron, &q) in act.scale.iter().enumerate() {
                if !group.contains(q) {
                    return Err(Error::OutOfGroup {
                        layer: l + 1,
                        neuron,
                        value: q,
                        group: group.name(),
                    });
                }
            }
        }
        Ok(())
    }
}

fn hidden_widths(dims: &[usize]) -> Vec<usize> {
    if dims.len() <= 2 {
        Vec::new()
    } else {
        dims[1..dims.len() - 1].to_vec()
    }
}

/// Transforms `net` into an equivalent parameterization.
pub fn apply_orbit(net: &FfnnParams, g: &OrbitElement) -> Result<FfnnParams> {
    g.check(net)?;
    let big_l = net.num_layers();
    let layers = net
        .layers
        .iter()
        .enumerate()
        .map(|(idx, layer)| {
            let out = (idx + 1 < big_l).then(|| &g.hidden[idx]);
            let inp = (idx > 0).then(|| &g.hidden[idx - 1]);
            let (weight, bias) = transform_block(&layer.weight, &layer.bias, out, inp);
            FfnnLayer {
                weight,
                bias,
                activation: layer.activation,
            }
        })
        .collect();
    FfnnParams::new(layers)
}

/// Acts on one layer block whose weight has shape `[out, in, ...]`;
/// `None` means the identity on that side.
pub(crate) fn transform_block(
    weight: &Tensor,
    bias: &[f64],
    out: Option<&LayerAction>,
    inp: Option<&LayerAction>,
) -> (Tensor, Vec<f64>) {
    let rows = weight.rows();
    let in_dim = weight.shape().get(1).copied().unwrap_or(1);
    let taps = weight.cols() / in_dim.max(1);
    let out_perm = |i: usize| out.map_or(i, |a| a.perm[i]);
    let out_scale = |i: usize| out.map_or(1.0, |a| a.scale[i]);
    let in_perm = |j: usize| inp.map_or(j, |a| a.perm[j]);
    let in_scale = |j: usize| inp.map_or(1.0, |a| a.scale[j]);
    let mut w = weight.clone();
    let cols = weight.cols();
    for i in 0..rows {
        let pi = out_perm(i);
        for j in 0..in_dim {
            let pj = in_perm(j);
            let f = out_scale(pi) / in_scale(pj);
            for t in 0..taps {
                w.data_mut()[i * cols + j * taps + t] = f * weight.data()[pi * cols + pj * taps + t];
            }
        }
    }
    let b = (0..rows).map(|i| out_scale(out_perm(i)) * bias[out_perm(i)]).collect();
    (w, b)
}
