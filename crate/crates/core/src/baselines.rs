//! Metanetworks that ignore weight-space symmetries. They serve as
//! baselines and as negative controls for the symmetry certificates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Binder, Mlp, ParamId, ParamStore, Pointwise, Tensor, Var};
use crate::zoo::{stat_features, stat_features_cnn, FfnnParams, ZooNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// All parameters, flattened.
    Flat,
    /// Per-layer weight and bias statistics.
    Stats,
}

impl FeatureKind {
    pub fn features(self, net: &ZooNet) -> Vec<f64> {
        match (self, net) {
            (FeatureKind::Flat, n) => n.to_flat(),
            (FeatureKind::Stats, ZooNet::Ffnn(n)) => stat_features(n),
            (FeatureKind::Stats, ZooNet::Cnn(n)) => stat_features_cnn(n),
        }
    }

    /// Stacks the features of `nets` into `[nets, width]`.
    pub fn matrix(self, nets: &[&ZooNet]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = nets.iter().map(|n| self.features(n)).collect();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Config("networks of different sizes in one batch".into()));
        }
        Tensor::matrix(rows.len(), width, rows.concat())
    }
}

/// An MLP over a fixed feature vector of each network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeatureMlp {
    pub kind: FeatureKind,
    pub store: ParamStore,
    pub mlp: Mlp,
}

impl FeatureMlp {
    pub fn new<R: Rng + ?Sized>(
        kind: FeatureKind,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        act: Pointwise,
        rng: &mut R,
    ) -> Self {
        let mut store = ParamStore::new();
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let mlp = Mlp::new(&mut store, "mlp", &dims, act, rng);
        FeatureMlp { kind, store, mlp }
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    /// `features` is `[nets, in_dim]`.
    pub fn forward(&self, b: &mut Binder, features: Var) -> Result<Var> {
        self.mlp.forward(b, features)
    }

    pub fn embed_nets(&self, nets: &[&FfnnParams]) -> Result<Tensor> {
        let owned: Vec<ZooNet> = nets.iter().map(|n| ZooNet::Ffnn((*n).clone())).collect();
        let refs: Vec<&ZooNet> = owned.iter().collect();
        let x = self.kind.matrix(&refs)?;
        let mut b = Binder::new(&self.store, false);
        let v = b.tape.constant(x);
        let y = self.forward(&mut b, v)?;
        Ok(b.tape.value(y).clone())
    }
}

/// `θ' = θ + γ · MLP(θ)` on the flattened parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpEditor {
    pub store: ParamStore,
    pub mlp: Mlp,
    pub gamma: ParamId,
}

impl MlpEditor {
    pub fn new<R: Rng + ?Sized>(num_params: usize, hidden: usize, gamma: f64, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "mlp", &[num_params, hidden, num_params], Pointwise::Silu, rng);
        let gamma = store.add("gamma", Tensor::scalar(gamma));
        MlpEditor { store, mlp, gamma }
    }

    pub fn edit_nets(&self, nets: &[&FfnnParams]) -> Result<Vec<FfnnParams>> {
        let flat: Vec<Vec<f64>> = nets.iter().map(|n| n.to_flat()).collect();
        let p = self.mlp.in_dim();
        if flat.iter().any(|f| f.len() != p) {
            return Err(Error::Config(format!("editor expects {p} parameters")));
        }
        let x = Tensor::matrix(flat.len(), p, flat.concat())?;
        let mut b = Binder::new(&self.store, false);
        let xv = b.tape.constant(x);
        let d = self.mlp.forward(&mut b, xv)?;
        let g = b.param(self.gamma);
        let d = b.tape.mul_scalar_var(d, g)?;
        let y = b.tape.add(xv, d)?;
        let out = b.tape.value(y).clone();
        nets.iter()
            .enumerate()
            .map(|(i, n)| FfnnParams::from_flat(&n.layer_dims(), &n.activations(), out.row_slice(i)))
            .collect()
    }
}
