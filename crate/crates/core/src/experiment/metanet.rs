use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{FeatureKind, FeatureMlp, MlpEditor};
use crate::error::{Error, Result};
use crate::gmn::{load_store_config, load_store_into, save_store, GmnOutput, HeadKind, ScaleGmn, ScaleGmnConfig};
use crate::graph::{build_graph, build_graph_cnn, GraphBatch, ParamGraph};
use crate::tensor::{Binder, ParamStore, Pointwise, Var};
use crate::zoo::{FfnnParams, ZooNet};

/// Fully resolved description of a metanetwork, enough to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ModelSpec {
    Scalegmn(ScaleGmnConfig),
    FeatureMlp {
        features: FeatureKind,
        in_dim: usize,
        hidden: Vec<usize>,
        out_dim: usize,
    },
    MlpEditor {
        num_params: usize,
        hidden: usize,
        gamma: f64,
    },
}

#[derive(Clone, Debug)]
pub enum MetaNet {
    Gmn(Box<ScaleGmn>),
    Features(FeatureMlp),
    Editor(MlpEditor),
}

/// Per-network parameter tensors `[W1, b1, W2, b2, …]` living on a tape.
pub type NetVars = Vec<Var>;

impl MetaNet {
    pub fn new<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        Ok(match spec {
            ModelSpec::Scalegmn(cfg) => MetaNet::Gmn(Box::new(ScaleGmn::new(cfg.clone(), rng)?)),
            ModelSpec::FeatureMlp {
                features,
                in_dim,
                hidden,
                out_dim,
            } => MetaNet::Features(FeatureMlp::new(*features, *in_dim, hidden, *out_dim, Pointwise::Relu, rng)),
            ModelSpec::MlpEditor {
                num_params,
                hidden,
                gamma,
            } => MetaNet::Editor(MlpEditor::new(*num_params, *hidden, *gamma, rng)),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            MetaNet::Gmn(m) => ModelSpec::Scalegmn(m.config.clone()),
            MetaNet::Features(m) => ModelSpec::FeatureMlp {
                features: m.kind,
                in_dim: m.mlp.in_dim(),
                hidden: m.mlp.layers[..m.mlp.layers.len() - 1].iter().map(|l| l.out_dim).collect(),
                out_dim: m.mlp.out_dim(),
            },
            MetaNet::Editor(m) => ModelSpec::MlpEditor {
                num_params: m.mlp.in_dim(),
                hidden: m.mlp.layers[0].out_dim,
                gamma: m.store.get(m.gamma).item(),
            },
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            MetaNet::Gmn(m) => &m.store,
            MetaNet::Features(m) => &m.store,
            MetaNet::Editor(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            MetaNet::Gmn(m) => &mut m.store,
            MetaNet::Features(m) => &mut m.store,
            MetaNet::Editor(m) => &mut m.store,
        }
    }

    pub fn is_editor(&self) -> bool {
        match self {
            MetaNet::Gmn(m) => m.config.head == HeadKind::EquivariantEdit,
            MetaNet::Features(_) => false,
            MetaNet::Editor(_) => true,
        }
    }

    /// Graph of `net` in the layout this model expects.
    pub fn graph(&self, net: &ZooNet) -> Result<ParamGraph> {
        let MetaNet::Gmn(m) = self else {
            return Err(Error::Config("only graph metanetworks consume graphs".into()));
        };
        match net {
            ZooNet::Ffnn(n) => build_graph(n, m.config.direction),
            ZooNet::Cnn(n) => build_graph_cnn(n, m.config.direction),
        }
    }

    /// Invariant predictions `[nets, out]` on `b`'s tape.
    pub fn predict(&self, b: &mut Binder, nets: &[&ZooNet]) -> Result<Var> {
        match self {
            MetaNet::Gmn(m) => {
                let graphs = nets.iter().map(|n| self.graph(n)).collect::<Result<Vec<_>>>()?;
                let refs: Vec<&ParamGraph> = graphs.iter().collect();
                let batch = GraphBatch::new(&refs)?;
                match m.forward(b, &batch)? {
                    GmnOutput::Embedding(v) => Ok(v),
                    GmnOutput::Edited { .. } => Err(Error::Config("model has an edit head".into())),
                }
            }
            MetaNet::Features(m) => {
                let x = m.kind.matrix(nets)?;
                let x = b.tape.constant(x);
                m.forward(b, x)
            }
            MetaNet::Editor(_) => Err(Error::Config("an editor has no invariant output".into())),
        }
    }

    /// Edited parameters of each net as tape variables. For graph models
    /// the edit acts on the graph's (phase-canonical) parameters.
    pub fn edit(&self, b: &mut Binder, nets: &[&FfnnParams]) -> Result<Vec<NetVars>> {
        let dims = nets
            .first()
            .ok_or_else(|| Error::Config("empty batch".into()))?
            .layer_dims();
        match self {
            MetaNet::Gmn(m) => {
                let graphs = nets
                    .iter()
                    .map(|n| build_graph(n, m.config.direction))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&ParamGraph> = graphs.iter().collect();
                let batch = GraphBatch::new(&refs)?;
                let GmnOutput::Edited { vertex, edge } = m.forward(b, &batch)? else {
                    return Err(Error::Config("model has an invariant head".into()));
                };
                let (nv, ne) = (batch.vertices_per_graph, batch.edges_per_graph);
                (0..nets.len())
                    .map(|gi| {
                        let mut out = Vec::with_capacity(2 * (dims.len() - 1));
                        let mut vo = gi * nv + dims[0];
                        let mut eo = gi * ne;
                        for w in dims.windows(2) {
                            let wv = b.tape.slice_rows(edge, eo, w[0] * w[1])?;
                            out.push(b.tape.reshape(wv, w[1], w[0])?);
                            let bv = b.tape.slice_rows(vertex, vo, w[1])?;
                            out.push(b.tape.reshape(bv, 1, w[1])?);
                            eo += w[0] * w[1];
                            vo += w[1];
                        }
                        Ok(out)
                    })
                    .collect()
            }
            MetaNet::Editor(m) => {
                let flat: Vec<Vec<f64>> = nets.iter().map(|n| n.to_flat()).collect();
                let p = m.mlp.in_dim();
                if flat.iter().any(|f| f.len() != p) {
                    return Err(Error::Config(format!("editor expects {p} parameters")));
                }
                let x = crate::tensor::Tensor::matrix(flat.len(), p, flat.concat())?;
                let xv = b.tape.constant(x);
                let d = m.mlp.forward(b, xv)?;
                let g = b.param(m.gamma);
                let d = b.tape.mul_scalar_var(d, g)?;
                let y = b.tape.add(xv, d)?;
                (0..nets.len())
                    .map(|i| {
                        let row = b.tape.slice_rows(y, i, 1)?;
                        let mut out = Vec::with_capacity(2 * (dims.len() - 1));
                        let mut o = 0;
                        for w in dims.windows(2) {
                            let wv = b.tape.slice_cols(row, o, w[0] * w[1])?;
                            out.push(b.tape.reshape(wv, w[1], w[0])?);
                            o += w[0] * w[1];
                            out.push(b.tape.slice_cols(row, o, w[1])?);
                            o += w[1];
                        }
                        Ok(out)
                    })
                    .collect()
            }
            MetaNet::Features(_) => Err(Error::Config("a feature MLP cannot edit networks".into())),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_store(&self.spec(), self.store(), dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec: ModelSpec = load_store_config(dir)?;
        let mut m = MetaNet::new(&spec, &mut ChaCha8Rng::seed_from_u64(0))?;
        load_store_into(m.store_mut(), dir)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::ActivationDescriptor;

    fn tanh_net(seed: u64) -> FfnnParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let acts = [ActivationDescriptor::tanh(), ActivationDescriptor::identity()];
        FfnnParams::random(&[2, 3, 1], &acts, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn checkpoints_round_trip_for_every_kind() {
        let specs = [
            ModelSpec::Scalegmn(ScaleGmnConfig {
                layer_dims: vec![2, 3, 1],
                ..Default::default()
            }),
            ModelSpec::FeatureMlp {
                features: FeatureKind::Flat,
                in_dim: 13,
                hidden: vec![5],
                out_dim: 2,
            },
            ModelSpec::MlpEditor {
                num_params: 13,
                hidden: 4,
                gamma: 0.5,
            },
        ];
        for spec in specs {
            let m = MetaNet::new(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert_eq!(m.spec(), spec);
            let d = tempfile::tempdir().unwrap();
            m.save(d.path()).unwrap();
            let l = MetaNet::load(d.path()).unwrap();
            assert_eq!(l.spec(), spec);
            for (a, b) in l.store().tensors().iter().zip(m.store().tensors()) {
                assert!(a.zip_map(b, |x, y| x - y).max_abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tape_edits_match_the_direct_path() {
        let nets = [tanh_net(1), tanh_net(2)];
        let refs: Vec<&FfnnParams> = nets.iter().collect();
        let cfg = ScaleGmnConfig {
            layer_dims: vec![2, 3, 1],
            head: HeadKind::EquivariantEdit,
            gamma_init: 0.3,
            ..Default::default()
        };
        let gmn = ScaleGmn::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let direct = gmn.edit_nets(&refs).unwrap();
        let editor = MlpEditor::new(13, 4, 0.3, &mut ChaCha8Rng::seed_from_u64(0));
        let direct_mlp = editor.edit_nets(&refs).unwrap();
        for (m, want) in [(MetaNet::Gmn(Box::new(gmn)), direct), (MetaNet::Editor(editor), direct_mlp)] {
            let mut b = Binder::new(m.store(), false);
            let vars = m.edit(&mut b, &refs).unwrap();
            for (vs, w) in vars.iter().zip(&want) {
                for (v, t) in vs.iter().zip(w.to_tensors()) {
                    assert_eq!(b.tape.value(*v), &t);
                }
            }
        }
    }
}
