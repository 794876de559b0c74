use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{HeadKind, ReadoutKind, ScaleGmnConfig};
use crate::equivariant::{Canonicalizer, ReScaleEqNet, ScaleEqNet, ScaleInvNet};
use crate::error::{Error, Result};
use crate::graph::{build_graph, pe_class_counts, GraphBatch, ParamGraph};
use crate::tensor::{Binder, Linear, Mlp, ParamId, ParamStore, Tensor, Var};
use crate::zoo::{FfnnLayer, FfnnParams};

/// Message functions of one direction in one round.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct MsgNets {
    /// Targets whose representation scales (hidden vertices).
    rescale: ReScaleEqNet,
    eq: ScaleEqNet,
    /// Targets fixed by every symmetry (outputs forward, inputs backward).
    rescale_fixed: ReScaleEqNet,
    mlp_fixed: Mlp,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EdgeUpdate {
    inv: ScaleInvNet,
    eq: ScaleEqNet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Round {
    fw: MsgNets,
    bw: Option<MsgNets>,
    upd_hidden: ScaleEqNet,
    upd_input: Mlp,
    upd_output: Mlp,
    upd_edge: Option<EdgeUpdate>,
    upd_back_edge: Option<EdgeUpdate>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Readout {
    DeepsetsIo {
        canon: Canonicalizer,
        phi: Mlp,
        rho: Mlp,
    },
    OutputConcat {
        rho: Mlp,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EditHead {
    hidden_bias: Linear,
    output_bias: Linear,
    edge: Linear,
    gamma: ParamId,
}

/// Result of a forward pass over a batch.
pub enum GmnOutput {
    /// `[graphs, out_dim]`.
    Embedding(Var),
    /// Edited raw features: vertices `[N, 1]` and edges `[E, 1]`, laid out
    /// like the batch.
    Edited { vertex: Var, edge: Var },
}

/// A scale equivariant graph metanetwork.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaleGmn {
    pub config: ScaleGmnConfig,
    pub store: ParamStore,
    pe_vertex: Option<ParamId>,
    pe_edge: Option<ParamId>,
    init_hidden: ScaleEqNet,
    init_input: Mlp,
    init_output: Mlp,
    init_edge: ScaleEqNet,
    init_back_edge: Option<ScaleEqNet>,
    rounds: Vec<Round>,
    readout: Option<Readout>,
    edit: Option<EditHead>,
}

struct EdgeSet {
    edges: Rc<Vec<usize>>,
    tgt: Rc<Vec<usize>>,
    src: Rc<Vec<usize>>,
}

impl EdgeSet {
    fn new(edges: &Rc<Vec<usize>>, tgt_of: &[usize], src_of: &[usize]) -> Self {
        EdgeSet {
            edges: edges.clone(),
            tgt: Rc::new(edges.iter().map(|&k| tgt_of[k]).collect()),
            src: Rc::new(edges.iter().map(|&k| src_of[k]).collect()),
        }
    }
}

/// Vertex and edge PEs of one batch, already gathered per element.
struct Pe {
    vertex: Option<Var>,
    edge: Option<Var>,
}

impl ScaleGmn {
    pub fn new<R: Rng + ?Sized>(config: ScaleGmnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let blk = c.block();
        let mut s = ParamStore::new();
        let (dv, de) = (c.vertex_dim, c.edge_dim);
        let pe = c.pe_dim;
        let (nvc, nec) = pe_class_counts(&c.layer_dims);
        let pe_vertex = (pe > 0).then(|| {
            s.add("pe.vertex", Tensor::from_fn(nvc, pe, |_, _| rng.random_range(-1.0..1.0)))
        });
        let pe_edge = (pe > 0).then(|| {
            s.add("pe.edge", Tensor::from_fn(nec, pe, |_, _| rng.random_range(-1.0..1.0)))
        });
        let pe_msg = if c.pe_in_messages { 3 * pe } else { 0 };
        let pe_upd = if c.pe_in_messages { pe } else { 0 };
        let bidir = c.is_bidirectional();
        let depth = c.eq_depth;
        let h = c.mlp_hidden;

        let init_hidden = ScaleEqNet::new(&mut s, "init.hidden", &[1], &[dv], pe, depth, &blk, rng);
        let init_input = Mlp::new(&mut s, "init.input", &[1 + pe, h, dv], c.act, rng);
        let init_output = Mlp::new(&mut s, "init.output", &[1 + pe, h, dv], c.act, rng);
        let init_edge = ScaleEqNet::new(&mut s, "init.edge", &[c.edge_in], &[de], pe, depth, &blk, rng);
        let init_back_edge = bidir.then(|| {
            ScaleEqNet::new(&mut s, "init.back_edge", &[c.edge_in], &[de], pe, depth, &blk, rng)
        });

        let msg = |s: &mut ParamStore, name: &str, rng: &mut R| MsgNets {
            rescale: ReScaleEqNet::new(s, &format!("{name}.rescale"), c.rescale, &[dv, de], dv, &blk, rng),
            eq: ScaleEqNet::new(s, &format!("{name}.eq"), &[dv], &[dv], pe_msg, depth, &blk, rng),
            rescale_fixed: ReScaleEqNet::new(
                s,
                &format!("{name}.rescale_fixed"),
                c.rescale,
                &[dv, de],
                dv,
                &blk,
                rng,
            ),
            mlp_fixed: Mlp::new(s, &format!("{name}.fixed"), &[2 * dv + pe_msg, h, dv], c.act, rng),
        };
        let edge_upd = |s: &mut ParamStore, name: &str, rng: &mut R| EdgeUpdate {
            inv: ScaleInvNet::new(s, &format!("{name}.inv"), &[dv, dv], 0, de, &blk, rng),
            eq: ScaleEqNet::new(s, &format!("{name}.eq"), &[de], &[de], de + pe_msg, depth, &blk, rng),
        };
        let m = if bidir { 2 } else { 1 };
        let mut rounds = Vec::with_capacity(c.layers);
        for t in 0..c.layers {
            let p = format!("round{t}");
            rounds.push(Round {
                fw: msg(&mut s, &format!("{p}.msg_fw"), rng),
                bw: bidir.then(|| msg(&mut s, &format!("{p}.msg_bw"), rng)),
                upd_hidden: ScaleEqNet::new(
                    &mut s,
                    &format!("{p}.upd.hidden"),
                    &[(1 + m) * dv],
                    &[dv],
                    pe_upd,
                    depth,
                    &blk,
                    rng,
                ),
                upd_input: Mlp::new(
                    &mut s,
                    &format!("{p}.upd.input"),
                    &[m * dv + pe_upd, h, dv],
                    c.act,
                    rng,
                ),
                upd_output: Mlp::new(
                    &mut s,
                    &format!("{p}.upd.output"),
                    &[2 * dv + pe_upd, h, dv],
                    c.act,
                    rng,
                ),
                upd_edge: c.edge_updates.then(|| edge_upd(&mut s, &format!("{p}.upd.edge"), rng)),
                upd_back_edge: (c.edge_updates && bidir)
                    .then(|| edge_upd(&mut s, &format!("{p}.upd.back_edge"), rng)),
            });
        }

        let (d0, dl) = (c.layer_dims[0], *c.layer_dims.last().unwrap());
        let (readout, edit) = match c.head {
            HeadKind::Invariant => {
                let r = match c.readout {
                    ReadoutKind::DeepsetsIo => {
                        let canon = Canonicalizer::new(&mut s, "readout.canon", c.canon, dv, &blk, rng);
                        let phi = Mlp::new(&mut s, "readout.phi", &[canon.out_dim(), h, dv], c.act, rng);
                        let rho = Mlp::new(
                            &mut s,
                            "readout.rho",
                            &[dv + (d0 + dl) * dv, h, c.out_dim],
                            c.act,
                            rng,
                        );
                        Readout::DeepsetsIo { canon, phi, rho }
                    }
                    ReadoutKind::OutputConcat => Readout::OutputConcat {
                        rho: Mlp::new(&mut s, "readout.rho", &[dl * dv, h, c.out_dim], c.act, rng),
                    },
                };
                // small final layer: predictions start near uniform
                let last = match &r {
                    Readout::DeepsetsIo { rho, .. } | Readout::OutputConcat { rho } => rho.layers.last(),
                };
                if let Some(l) = last {
                    for id in std::iter::once(l.weight).chain(l.bias) {
                        s.get_mut(id).data_mut().iter_mut().for_each(|v| *v *= 0.1);
                    }
                }
                (Some(r), None)
            }
            HeadKind::EquivariantEdit => {
                let hidden_bias = Linear::new(&mut s, "edit.hidden_bias", dv, 1, false, rng);
                let output_bias = Linear::new(&mut s, "edit.output_bias", dv, 1, true, rng);
                let edge = Linear::new(&mut s, "edit.edge", de, 1, false, rng);
                let gamma = s.add("edit.gamma", Tensor::scalar(c.gamma_init));
                (
                    None,
                    Some(EditHead {
                        hidden_bias,
                        output_bias,
                        edge,
                        gamma,
                    }),
                )
            }
        };

        Ok(ScaleGmn {
            config,
            store: s,
            pe_vertex,
            pe_edge,
            init_hidden,
            init_input,
            init_output,
            init_edge,
            init_back_edge,
            rounds,
            readout,
            edit,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Runs the configured model on a batch.
    pub fn forward(&self, b: &mut Binder, batch: &GraphBatch) -> Result<GmnOutput> {
        let c = &self.config;
        if batch.layer_dims != c.layer_dims {
            return Err(Error::Config(format!(
                "model expects networks of widths {:?}, got {:?}",
                c.layer_dims, batch.layer_dims
            )));
        }
        if batch.edge_feat.cols() != c.edge_in {
            return Err(Error::Config(format!(
                "model expects edge features of width {}, got {}",
                c.edge_in,
                batch.edge_feat.cols()
            )));
        }
        if batch.is_bidirectional() != c.is_bidirectional() {
            return Err(Error::Config("graph direction does not match the model".into()));
        }
        let n = batch.num_vertices();
        let (src, dst) = (batch.edge_src.as_slice(), batch.edge_dst.as_slice());
        let fw_h = EdgeSet::new(&batch.fw_to_hidden, dst, src);
        let fw_o = EdgeSet::new(&batch.fw_to_output, dst, src);
        let bw_h = EdgeSet::new(&batch.bw_to_hidden, src, dst);
        let bw_i = EdgeSet::new(&batch.bw_to_input, src, dst);
        let all_edges = Rc::new((0..batch.num_edges()).collect::<Vec<_>>());
        let fw_all = EdgeSet::new(&all_edges, dst, src);
        let bw_all = EdgeSet::new(&all_edges, src, dst);

        let pe = Pe {
            vertex: match self.pe_vertex {
                Some(id) => {
                    let t = b.param(id);
                    Some(b.tape.gather_rows(t, batch.vertex_class.clone())?)
                }
                None => None,
            },
            edge: match self.pe_edge {
                Some(id) => {
                    let t = b.param(id);
                    Some(b.tape.gather_rows(t, batch.edge_class.clone())?)
                }
                None => None,
            },
        };
        let pe_upd = if c.pe_in_messages { pe.vertex } else { None };

        // initial representations
        let k = c.input_scale;
        let xv = b.tape.constant(batch.vertex_feat.map(|v| k * v));
        let xe = b.tape.constant(batch.edge_feat.map(|v| k * v));
        let hh = {
            let x = rows(b, xv, &batch.hidden)?;
            let p = opt_rows(b, pe.vertex, &batch.hidden)?;
            self.init_hidden.forward1(b, x, p)?
        };
        let hi = {
            let x = rows(b, xv, &batch.inputs)?;
            let p = opt_rows(b, pe.vertex, &batch.inputs)?;
            let z = cat(b, &[Some(x), p])?;
            self.init_input.forward(b, z)?
        };
        let ho = {
            let x = rows(b, xv, &batch.outputs)?;
            let p = opt_rows(b, pe.vertex, &batch.outputs)?;
            let z = cat(b, &[Some(x), p])?;
            self.init_output.forward(b, z)?
        };
        let mut hv = assemble(
            b,
            &[(hh, &batch.hidden), (hi, &batch.inputs), (ho, &batch.outputs)],
            n,
            c.vertex_dim,
        )?;
        let mut he = self.init_edge.forward1(b, xe, pe.edge)?;
        let mut heb = match (&self.init_back_edge, &batch.backward_feat) {
            (Some(net), Some(f)) => {
                let x = b.tape.constant(f.map(|v| k * v));
                Some(net.forward1(b, x, pe.edge)?)
            }
            _ => None,
        };

        for round in &self.rounds {
            let m_fw = self.messages(b, &round.fw, hv, he, &pe, &fw_h, &fw_o, n)?;
            let m_bw = match (&round.bw, heb) {
                (Some(nets), Some(e)) => Some(self.messages(b, nets, hv, e, &pe, &bw_h, &bw_i, n)?),
                _ => None,
            };

            let nh = {
                let x = rows(b, hv, &batch.hidden)?;
                let mf = rows(b, m_fw, &batch.hidden)?;
                let mb = opt_rows(b, m_bw, &batch.hidden)?;
                let z = cat(b, &[Some(x), Some(mf), mb])?;
                let p = opt_rows(b, pe_upd, &batch.hidden)?;
                let u = round.upd_hidden.forward1(b, z, p)?;
                self.skip(b, x, u)?
            };
            let ni = {
                let x = rows(b, hv, &batch.inputs)?;
                let mb = opt_rows(b, m_bw, &batch.inputs)?;
                let p = opt_rows(b, pe_upd, &batch.inputs)?;
                let z = cat(b, &[Some(x), mb, p])?;
                let u = round.upd_input.forward(b, z)?;
                self.skip(b, x, u)?
            };
            let no = {
                let x = rows(b, hv, &batch.outputs)?;
                let mf = rows(b, m_fw, &batch.outputs)?;
                let p = opt_rows(b, pe_upd, &batch.outputs)?;
                let z = cat(b, &[Some(x), Some(mf), p])?;
                let u = round.upd_output.forward(b, z)?;
                self.skip(b, x, u)?
            };
            hv = assemble(
                b,
                &[(nh, &batch.hidden), (ni, &batch.inputs), (no, &batch.outputs)],
                n,
                c.vertex_dim,
            )?;
            if let Some(u) = &round.upd_edge {
                he = self.edge_update(b, u, he, hv, &pe, &fw_all)?;
            }
            if let (Some(u), Some(e)) = (&round.upd_back_edge, heb) {
                heb = Some(self.edge_update(b, u, e, hv, &pe, &bw_all)?);
            }
        }

        match (&self.readout, &self.edit) {
            (Some(r), _) => Ok(GmnOutput::Embedding(self.read(b, r, batch, hv)?)),
            (None, Some(e)) => {
                let dh = {
                    let x = rows(b, hv, &batch.hidden)?;
                    e.hidden_bias.forward(b, x)?
                };
                let dout = {
                    let x = rows(b, hv, &batch.outputs)?;
                    e.output_bias.forward(b, x)?
                };
                let dv = assemble(b, &[(dh, &batch.hidden), (dout, &batch.outputs)], n, 1)?;
                let dw = e.edge.forward(b, he)?;
                let g = b.param(e.gamma);
                let sv = b.tape.mul_scalar_var(dv, g)?;
                let sw = b.tape.mul_scalar_var(dw, g)?;
                // the residual is on the raw parameters
                let raw_v = b.tape.constant(batch.vertex_feat.clone());
                let raw_e = b.tape.constant(batch.edge_feat.clone());
                let vertex = b.tape.add(raw_v, sv)?;
                let edge = b.tape.add(raw_e, sw)?;
                Ok(GmnOutput::Edited { vertex, edge })
            }
            (None, None) => unreachable!("a head is always built"),
        }
    }

    fn skip(&self, b: &mut Binder, x: Var, u: Var) -> Result<Var> {
        if self.config.skip {
            b.tape.add(x, u)
        } else {
            Ok(u)
        }
    }

    /// PEs of (target, source, edge) for each edge of `set`, concatenated.
    fn msg_pe(&self, b: &mut Binder, pe: &Pe, set: &EdgeSet) -> Result<Option<Var>> {
        if !self.config.pe_in_messages {
            return Ok(None);
        }
        let (Some(pv), Some(pe_e)) = (pe.vertex, pe.edge) else {
            return Ok(None);
        };
        let a = b.tape.gather_rows(pv, set.tgt.clone())?;
        let s = b.tape.gather_rows(pv, set.src.clone())?;
        let e = b.tape.gather_rows(pe_e, set.edges.clone())?;
        Ok(Some(b.tape.concat_cols(&[a, s, e])?))
    }

    #[allow(clippy::too_many_arguments)]
    fn messages(
        &self,
        b: &mut Binder,
        nets: &MsgNets,
        hv: Var,
        he: Var,
        pe: &Pe,
        scaled: &EdgeSet,
        fixed: &EdgeSet,
        n: usize,
    ) -> Result<Var> {
        let mut parts = Vec::new();
        if !scaled.edges.is_empty() {
            let y = b.tape.gather_rows(hv, scaled.src.clone())?;
            let e = b.tape.gather_rows(he, scaled.edges.clone())?;
            let r = nets.rescale.forward(b, &[y, e])?;
            let p = self.msg_pe(b, pe, scaled)?;
            let m = nets.eq.forward1(b, r, p)?;
            parts.push(b.tape.scatter_add_rows(m, scaled.tgt.clone(), n)?);
        }
        if !fixed.edges.is_empty() {
            let x = b.tape.gather_rows(hv, fixed.tgt.clone())?;
            let y = b.tape.gather_rows(hv, fixed.src.clone())?;
            let e = b.tape.gather_rows(he, fixed.edges.clone())?;
            let r = nets.rescale_fixed.forward(b, &[y, e])?;
            let p = self.msg_pe(b, pe, fixed)?;
            let z = cat(b, &[Some(x), Some(r), p])?;
            let m = nets.mlp_fixed.forward(b, z)?;
            parts.push(b.tape.scatter_add_rows(m, fixed.tgt.clone(), n)?);
        }
        sum_all(b, parts, n, self.config.vertex_dim)
    }

    fn edge_update(
        &self,
        b: &mut Binder,
        u: &EdgeUpdate,
        he: Var,
        hv: Var,
        pe: &Pe,
        set: &EdgeSet,
    ) -> Result<Var> {
        let x = b.tape.gather_rows(hv, set.tgt.clone())?;
        let y = b.tape.gather_rows(hv, set.src.clone())?;
        let inv = u.inv.forward(b, &[x, y], None)?;
        let p = self.msg_pe(b, pe, set)?;
        let aug = cat(b, &[Some(inv), p])?;
        let out = u.eq.forward1(b, he, Some(aug))?;
        self.skip(b, he, out)
    }

    fn read(&self, b: &mut Binder, r: &Readout, batch: &GraphBatch, hv: Var) -> Result<Var> {
        let g = batch.num_graphs;
        let dv = self.config.vertex_dim;
        let d0 = batch.layer_dims[0];
        let dl = *batch.layer_dims.last().unwrap();
        let outs = rows(b, hv, &batch.outputs)?;
        let outs = b.tape.reshape(outs, g, dl * dv)?;
        match r {
            Readout::OutputConcat { rho } => rho.forward(b, outs),
            Readout::DeepsetsIo { canon, phi, rho } => {
                let pooled = if batch.hidden.is_empty() {
                    b.tape.constant(Tensor::zeros(g, dv))
                } else {
                    let x = rows(b, hv, &batch.hidden)?;
                    let x = canon.forward(b, x)?;
                    let f = phi.forward(b, x)?;
                    b.tape.scatter_add_rows(f, batch.hidden_graph.clone(), g)?
                };
                let ins = rows(b, hv, &batch.inputs)?;
                let ins = b.tape.reshape(ins, g, d0 * dv)?;
                let z = b.tape.concat_cols(&[pooled, ins, outs])?;
                rho.forward(b, z)
            }
        }
    }

    /// Invariant embeddings `[nets, out_dim]` of dense networks.
    pub fn embed_nets(&self, nets: &[&FfnnParams]) -> Result<Tensor> {
        let graphs = nets
            .iter()
            .map(|n| build_graph(n, self.config.direction))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ParamGraph> = graphs.iter().collect();
        let batch = GraphBatch::new(&refs)?;
        let mut b = Binder::new(&self.store, false);
        match self.forward(&mut b, &batch)? {
            GmnOutput::Embedding(v) => Ok(b.tape.value(v).clone()),
            GmnOutput::Edited { .. } => Err(Error::Config("model has an edit head".into())),
        }
    }

    /// Edited copies of dense networks.
    pub fn edit_nets(&self, nets: &[&FfnnParams]) -> Result<Vec<FfnnParams>> {
        let graphs = nets
            .iter()
            .map(|n| build_graph(n, self.config.direction))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ParamGraph> = graphs.iter().collect();
        let batch = GraphBatch::new(&refs)?;
        let mut b = Binder::new(&self.store, false);
        match self.forward(&mut b, &batch)? {
            GmnOutput::Edited { vertex, edge } => {
                Self::edited_nets(&batch, b.tape.value(vertex), b.tape.value(edge), nets)
            }
            GmnOutput::Embedding(_) => Err(Error::Config("model has an invariant head".into())),
        }
    }

    /// Networks described by an edit-head output, one per graph. Input
    /// widths and activations come from `templates`.
    pub fn edited_nets(
        batch: &GraphBatch,
        vertex: &Tensor,
        edge: &Tensor,
        templates: &[&FfnnParams],
    ) -> Result<Vec<FfnnParams>> {
        let dims = &batch.layer_dims;
        let (nv, ne) = (batch.vertices_per_graph, batch.edges_per_graph);
        templates
            .iter()
            .enumerate()
            .map(|(gi, t)| {
                let mut layers = Vec::with_capacity(dims.len() - 1);
                let mut vo = gi * nv + dims[0];
                let mut eo = gi * ne;
                for (l, w) in dims.windows(2).enumerate() {
                    let weight = Tensor::matrix(w[1], w[0], edge.data()[eo..eo + w[0] * w[1]].to_vec())?;
                    let bias = vertex.data()[vo..vo + w[1]].to_vec();
                    eo += w[0] * w[1];
                    vo += w[1];
                    layers.push(FfnnLayer {
                        weight,
                        bias,
                        activation: t.layers[l].activation,
                    });
                }
                FfnnParams::new(layers)
            })
            .collect()
    }
}

fn rows(b: &mut Binder, v: Var, idx: &Rc<Vec<usize>>) -> Result<Var> {
    b.tape.gather_rows(v, idx.clone())
}

fn opt_rows(b: &mut Binder, v: Option<Var>, idx: &Rc<Vec<usize>>) -> Result<Option<Var>> {
    v.map(|v| rows(b, v, idx)).transpose()
}

fn cat(b: &mut Binder, parts: &[Option<Var>]) -> Result<Var> {
    let p: Vec<Var> = parts.iter().flatten().copied().collect();
    b.tape.concat_cols(&p)
}

fn sum_all(b: &mut Binder, parts: Vec<Var>, n: usize, width: usize) -> Result<Var> {
    let mut it = parts.into_iter();
    let Some(mut acc) = it.next() else {
        return Ok(b.tape.constant(Tensor::zeros(n, width)));
    };
    for p in it {
        acc = b.tape.add(acc, p)?;
    }
    Ok(acc)
}

/// Rows of each part placed at their vertex ids (each id appears once
/// across all parts).
fn assemble(b: &mut Binder, parts: &[(Var, &Rc<Vec<usize>>)], n: usize, width: usize) -> Result<Var> {
    let mut placed = Vec::with_capacity(parts.len());
    for &(v, idx) in parts {
        if !idx.is_empty() {
            placed.push(b.tape.scatter_add_rows(v, idx.clone(), n)?);
        }
    }
    sum_all(b, placed, n, width)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::{transform_graph, BackwardFeature, Direction};
    use crate::zoo::{apply_orbit, ActivationDescriptor, CanonMode, GroupKind, OrbitElement, ScaleSampler};

    fn net(act: ActivationDescriptor, dims: &[usize], seed: u64) -> FfnnParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acts = vec![act; dims.len() - 1];
        *acts.last_mut().unwrap() = ActivationDescriptor::identity();
        FfnnParams::random(dims, &acts, 1.0, &mut rng).unwrap()
    }

    fn run(model: &ScaleGmn, graphs: &[&ParamGraph]) -> GmnOutputValues {
        let batch = GraphBatch::new(graphs).unwrap();
        let mut b = Binder::new(&model.store, false);
        match model.forward(&mut b, &batch).unwrap() {
            GmnOutput::Embedding(v) => GmnOutputValues::Embedding(b.tape.value(v).clone()),
            GmnOutput::Edited { vertex, edge } => {
                GmnOutputValues::Edited(b.tape.value(vertex).clone(), b.tape.value(edge).clone())
            }
        }
    }

    enum GmnOutputValues {
        Embedding(Tensor),
        Edited(Tensor, Tensor),
    }

    fn embedding(o: GmnOutputValues) -> Tensor {
        match o {
            GmnOutputValues::Embedding(t) => t,
            _ => panic!("expected an embedding"),
        }
    }

    fn rel_dev(a: &Tensor, b: &Tensor) -> f64 {
        let d = a.data().iter().zip(b.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        d / a.max_abs().max(1e-12)
    }

    fn invariance_dev(cfg: ScaleGmnConfig, act: ActivationDescriptor, sampler: ScaleSampler) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ScaleGmn::new(cfg.clone(), &mut rng).unwrap();
        let a = net(act, &cfg.layer_dims, 11);
        let b = net(act, &cfg.layer_dims, 12);
        let ga = build_graph(&a, cfg.direction).unwrap();
        let gb = build_graph(&b, cfg.direction).unwrap();
        let base = embedding(run(&model, &[&ga, &gb]));
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let g = OrbitElement::sample(sampler, true, &cfg.layer_dims, &mut rng).unwrap();
            let ta = build_graph(&apply_orbit(&a, &g).unwrap(), cfg.direction).unwrap();
            let mode = BackwardFeature::for_group(act.group());
            let tb = transform_graph(&gb, &g, mode).unwrap();
            let out = embedding(run(&model, &[&ta, &tb]));
            worst = worst.max(rel_dev(&base, &out));
        }
        worst
    }

    #[test]
    fn invariant_under_sign_flips_and_permutations() {
        for dir in [Direction::Forward, Direction::Bidirectional] {
            for canon in [CanonMode::SignSymmetrize, CanonMode::SignAbs] {
                let cfg = ScaleGmnConfig {
                    direction: dir,
                    canon,
                    ..Default::default()
                };
                let d = invariance_dev(cfg, ActivationDescriptor::tanh(), ScaleSampler::Sign);
                assert!(d < 1e-10, "{dir:?} {canon:?}: {d}");
            }
        }
    }

    #[test]
    fn invariant_under_positive_scaling() {
        for dir in [Direction::Forward, Direction::Bidirectional] {
            for readout in [ReadoutKind::DeepsetsIo, ReadoutKind::OutputConcat] {
                let cfg = ScaleGmnConfig {
                    direction: dir,
                    group: GroupKind::Positive,
                    canon: CanonMode::NormDivide,
                    readout,
                    rescale: crate::equivariant::RescaleVariant::Outer,
                    eq_depth: 2,
                    ..Default::default()
                };
                let s = ScaleSampler::Positive { lambda: 1.0 };
                let d = invariance_dev(cfg, ActivationDescriptor::relu(), s);
                assert!(d < 1e-9, "{dir:?} {readout:?}: {d}");
            }
        }
    }

    #[test]
    fn trivial_group_still_permutation_invariant() {
        let cfg = ScaleGmnConfig {
            group: GroupKind::Trivial,
            canon: CanonMode::Identity,
            pe_dim: 0,
            edge_updates: false,
            ..Default::default()
        };
        let d = invariance_dev(cfg, ActivationDescriptor::tanh(), ScaleSampler::None);
        assert!(d < 1e-10, "{d}");
    }

    #[test]
    fn edit_head_is_equivariant() {
        let cfg = ScaleGmnConfig {
            head: HeadKind::EquivariantEdit,
            direction: Direction::Bidirectional,
            gamma_init: 0.5,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = ScaleGmn::new(cfg.clone(), &mut rng).unwrap();
        let a = net(ActivationDescriptor::tanh(), &cfg.layer_dims, 21);
        let edit = |n: &FfnnParams| {
            let g = build_graph(n, cfg.direction).unwrap();
            let batch = GraphBatch::new(&[&g]).unwrap();
            let GmnOutputValues::Edited(v, e) = run(&model, &[&g]) else {
                panic!("expected an edit")
            };
            ScaleGmn::edited_nets(&batch, &v, &e, &[n]).unwrap().remove(0)
        };
        let edited = edit(&a);
        assert_ne!(edited.to_flat(), a.to_flat());
        for _ in 0..5 {
            let g = OrbitElement::sample(ScaleSampler::Sign, true, &cfg.layer_dims, &mut rng).unwrap();
            let lhs = edit(&apply_orbit(&a, &g).unwrap()).to_flat();
            let rhs = apply_orbit(&edited, &g).unwrap().to_flat();
            let d = lhs.iter().zip(&rhs).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(d < 1e-10, "{d}");
        }
    }

    #[test]
    fn zero_gamma_edit_is_identity() {
        let cfg = ScaleGmnConfig {
            head: HeadKind::EquivariantEdit,
            gamma_init: 0.0,
            ..Default::default()
        };
        let model = ScaleGmn::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let a = net(ActivationDescriptor::tanh(), &cfg.layer_dims, 2);
        let g = build_graph(&a, cfg.direction).unwrap();
        let batch = GraphBatch::new(&[&g]).unwrap();
        let GmnOutputValues::Edited(v, e) = run(&model, &[&g]) else {
            panic!()
        };
        let out = ScaleGmn::edited_nets(&batch, &v, &e, &[&a]).unwrap();
        assert_eq!(out[0].to_flat(), a.to_flat());
    }

    #[test]
    fn batch_rows_match_single_runs() {
        let cfg = ScaleGmnConfig::default();
        let model = ScaleGmn::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let nets: Vec<_> = (0..3).map(|s| net(ActivationDescriptor::tanh(), &cfg.layer_dims, s)).collect();
        let graphs: Vec<_> = nets.iter().map(|n| build_graph(n, cfg.direction).unwrap()).collect();
        let refs: Vec<_> = graphs.iter().collect();
        let all = embedding(run(&model, &refs));
        for (i, g) in graphs.iter().enumerate() {
            let one = embedding(run(&model, &[g]));
            for (x, y) in one.data().iter().zip(all.row_slice(i)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_mismatched_batches() {
        let cfg = ScaleGmnConfig::default();
        let model = ScaleGmn::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let other = net(ActivationDescriptor::tanh(), &[2, 4, 1], 0);
        let g = build_graph(&other, Direction::Forward).unwrap();
        let batch = GraphBatch::new(&[&g]).unwrap();
        let mut b = Binder::new(&model.store, false);
        assert!(matches!(model.forward(&mut b, &batch), Err(Error::Config(_))));

        let bidir = build_graph(&net(ActivationDescriptor::tanh(), &[2, 8, 8, 1], 0), Direction::Bidirectional)
            .unwrap();
        let batch = GraphBatch::new(&[&bidir]).unwrap();
        let mut b = Binder::new(&model.store, false);
        assert!(model.forward(&mut b, &batch).is_err());
    }

    #[test]
    fn output_permutations_are_not_symmetries() {
        let cfg = ScaleGmnConfig {
            layer_dims: vec![2, 6, 3],
            ..Default::default()
        };
        let model = ScaleGmn::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let a = net(ActivationDescriptor::tanh(), &cfg.layer_dims, 1);
        let mut swapped = a.clone();
        let last = swapped.layers.last_mut().unwrap();
        let w = last.weight.clone();
        for j in 0..w.cols() {
            last.weight.set(0, j, w.get(1, j));
            last.weight.set(1, j, w.get(0, j));
        }
        last.bias.swap(0, 1);
        let e = model.embed_nets(&[&a, &swapped]).unwrap();
        assert!(rel_dev(&Tensor::row(e.row_slice(0).to_vec()), &Tensor::row(e.row_slice(1).to_vec())) > 1e-6);
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        use crate::tensor::{finite_diff_check, Tape};
        let cfg = ScaleGmnConfig {
            layer_dims: vec![3, 3, 3],
            vertex_dim: 3,
            edge_dim: 3,
            mlp_hidden: 4,
            pe_dim: 2,
            direction: Direction::Bidirectional,
            ..Default::default()
        };
        let model = ScaleGmn::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let nets: Vec<_> = (0..2).map(|s| net(ActivationDescriptor::tanh(), &cfg.layer_dims, s)).collect();
        let graphs: Vec<_> = nets.iter().map(|n| build_graph(n, cfg.direction).unwrap()).collect();
        let refs: Vec<_> = graphs.iter().collect();
        let batch = GraphBatch::new(&refs).unwrap();
        let labels = Rc::new(vec![0, 1]);
        let loss = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
            let t = std::mem::take(tape);
            let mut b = Binder::with_bound(&model.store, t, vars);
            let GmnOutput::Embedding(logits) = model.forward(&mut b, &batch)? else {
                unreachable!()
            };
            let l = b.tape.softmax_cross_entropy(logits, labels.clone());
            *tape = b.tape;
            l
        };
        let report = finite_diff_check(loss, model.store.tensors(), 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn single_layer_networks_work() {
        let cfg = ScaleGmnConfig {
            layer_dims: vec![3, 2],
            direction: Direction::Bidirectional,
            ..Default::default()
        };
        let model = ScaleGmn::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let a = net(ActivationDescriptor::tanh(), &[3, 2], 0);
        let g = build_graph(&a, cfg.direction).unwrap();
        let out = embedding(run(&model, &[&g]));
        assert_eq!(out.shape(), &[1, 2]);
        assert!(out.is_finite());
    }
}
