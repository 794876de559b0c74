use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::Tensor;
use super::mlp::{mlp_forward_inner, Pointwise};
use super::tape::{Gradients, Tape, Var};
use crate::error::Result;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Flat, named collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// A tape plus lazy bindings from store entries to tape leaves.
pub struct Binder<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a> Binder<'a> {
    /// `trainable = false` binds parameters as constants (inference).
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Binder {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            trainable,
        }
    }

    /// Continues on `tape`, with store entry `i` already bound to `vars[i]`.
    /// Used to differentiate through a model with respect to externally
    /// created leaves.
    pub fn with_bound(store: &'a ParamStore, tape: Tape, vars: &[Var]) -> Self {
        let mut bound: Vec<Option<Var>> = vars.iter().copied().map(Some).collect();
        bound.resize(store.len(), None);
        Binder {
            tape,
            store,
            bound,
            trainable: true,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.trainable {
            self.tape.leaf(t)
        } else {
            self.tape.constant(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Per-parameter gradients in store order; zeros for unused entries.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.store
            .tensors()
            .iter()
            .zip(&self.bound)
            .map(|(t, b)| match b.and_then(|v| grads.get(v)) {
                Some(g) => g.clone(),
                None => t.map(|_| 0.0),
            })
            .collect()
    }
}

/// Affine map stored as weight `[out, in]` and optional bias `[1, out]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform `±1/sqrt(in)` initialization.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let w = Tensor::from_fn(out_dim, in_dim, |_, _| rng.random_range(-bound..bound));
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| {
            let b = Tensor::from_fn(1, out_dim, |_, _| rng.random_range(-bound..bound));
            store.add(format!("{name}.bias"), b)
        });
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn bind(&self, b: &mut Binder) -> (Var, Option<Var>) {
        (b.param(self.weight), self.bias.map(|id| b.param(id)))
    }

    pub fn forward(&self, b: &mut Binder, x: Var) -> Result<Var> {
        let layer = self.bind(b);
        mlp_forward_inner(&mut b.tape, &[layer], Pointwise::Identity, None, false, x)
    }
}

/// Multi-layer perceptron over store parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Pointwise,
    pub head: Option<Pointwise>,
    pub layer_norm: bool,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`; all layers carry a bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        act: Pointwise,
        rng: &mut R,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Mlp {
            layers,
            act,
            head: None,
            layer_norm: false,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, b: &mut Binder, x: Var) -> Result<Var> {
        let layers: Vec<_> = self.layers.iter().map(|l| l.bind(b)).collect();
        mlp_forward_inner(&mut b.tape, &layers, self.act, self.head, self.layer_norm, x)
    }
}
