use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, DIV_EPS};
use crate::zoo::{canonicalize_phases, ActivationDescriptor, CnnParams, FfnnParams, GroupKind, OrbitElement};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Bidirectional,
}

/// How backward-edge features are derived from forward ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardFeature {
    Reciprocal,
    Copy,
}

impl BackwardFeature {
    /// Reciprocal for positive scaling, copy for sign (where `1/q = q`).
    pub fn for_group(g: GroupKind) -> Self {
        match g {
            GroupKind::Positive => BackwardFeature::Reciprocal,
            GroupKind::Sign | GroupKind::Trivial => BackwardFeature::Copy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexRole {
    Input,
    Hidden,
    Output,
}

/// A network as a layered graph: one vertex per neuron (or channel), one
/// edge per weight (or kernel).
///
/// Vertices are numbered layer by layer. Forward edges of layer `ℓ` run
/// from layer `ℓ−1` to `ℓ` and are listed by layer, then target, then
/// source, i.e. row-major over `W_ℓ`. Backward edges, when present, mirror
/// the forward list one-to-one with source and target swapped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGraph {
    /// `[d_0, …, d_L]`.
    pub layer_dims: Vec<usize>,
    /// First vertex id of each layer, plus the total at the end.
    pub layer_offsets: Vec<usize>,
    /// `[N, 1]`: 1 for inputs, the bias otherwise.
    pub vertex_feat: Tensor,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    /// `[E, edge_dim]`.
    pub edge_feat: Tensor,
    pub backward_feat: Option<Tensor>,
    /// Activation after each layer `1..=L`.
    pub activations: Vec<ActivationDescriptor>,
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    off.push(0);
    for d in dims {
        acc += d;
        off.push(acc);
    }
    off
}

impl ParamGraph {
    pub fn num_vertices(&self) -> usize {
        *self.layer_offsets.last().unwrap()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_feat.cols()
    }

    pub fn is_bidirectional(&self) -> bool {
        self.backward_feat.is_some()
    }

    /// `(layer, index within layer)` of vertex `v`.
    pub fn vertex_position(&self, v: usize) -> (usize, usize) {
        let l = self.layer_offsets.partition_point(|&o| o <= v) - 1;
        (l, v - self.layer_offsets[l])
    }

    pub fn vertex_id(&self, layer: usize, index: usize) -> usize {
        self.layer_offsets[layer] + index
    }

    pub fn role(&self, v: usize) -> VertexRole {
        let (l, _) = self.vertex_position(v);
        if l == 0 {
            VertexRole::Input
        } else if l == self.num_layers() {
            VertexRole::Output
        } else {
            VertexRole::Hidden
        }
    }

    /// First edge id of each layer `1..=L`, plus the total.
    pub fn edge_offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        let mut acc = 0;
        for w in self.layer_dims.windows(2) {
            acc += w[0] * w[1];
            off.push(acc);
        }
        off
    }

    /// Group acting on the hidden layers (the first hidden activation's).
    pub fn hidden_group(&self) -> GroupKind {
        if self.num_layers() < 2 {
            GroupKind::Trivial
        } else {
            self.activations[0].group()
        }
    }

    /// Line-oriented text form: `v layer index feat…` then
    /// `e layer src dst feat…` (and `b …` for backward features).
    pub fn debug_dump(&self) -> String {
        let mut s = String::new();
        let fmt = |row: &[f64]| {
            row.iter()
                .map(|v| format!("{v:.6e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        for v in 0..self.num_vertices() {
            let (l, i) = self.vertex_position(v);
            let _ = writeln!(s, "v {l} {i} {}", fmt(self.vertex_feat.row_slice(v)));
        }
        for (tag, feats) in [("e", Some(&self.edge_feat)), ("b", self.backward_feat.as_ref())] {
            let Some(f) = feats else { continue };
            for k in 0..self.num_edges() {
                let (ls, i) = self.vertex_position(self.edge_src[k]);
                let (_, j) = self.vertex_position(self.edge_dst[k]);
                let _ = writeln!(s, "{tag} {} {i} {j} {}", ls + 1, fmt(f.row_slice(k)));
            }
        }
        s
    }

    fn skeleton(
        dims: Vec<usize>,
        activations: Vec<ActivationDescriptor>,
        biases: Vec<&[f64]>,
        edge_dim: usize,
    ) -> (Self, Vec<f64>) {
        let layer_offsets = offsets(&dims);
        let n = *layer_offsets.last().unwrap();
        let mut vf = vec![1.0; dims[0]];
        for b in &biases {
            vf.extend_from_slice(b);
        }
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for l in 1..dims.len() {
            for i in 0..dims[l] {
                for j in 0..dims[l - 1] {
                    src.push(layer_offsets[l - 1] + j);
                    dst.push(layer_offsets[l] + i);
                }
            }
        }
        let e = src.len();
        let g = ParamGraph {
            layer_dims: dims,
            layer_offsets,
            vertex_feat: Tensor::matrix(n, 1, vf).expect("vertex count"),
            edge_src: src,
            edge_dst: dst,
            edge_feat: Tensor::zeros(e, edge_dim),
            backward_feat: None,
            activations,
        };
        (g, Vec::with_capacity(e * edge_dim))
    }
}

/// Graph of a dense network. Sine networks are phase-canonicalized first.
pub fn build_graph(net: &FfnnParams, direction: Direction) -> Result<ParamGraph> {
    net.validate()?;
    let net = canonicalize_phases(net);
    let biases: Vec<&[f64]> = net.layers.iter().map(|l| l.bias.as_slice()).collect();
    let (mut g, mut ef) = ParamGraph::skeleton(net.layer_dims(), net.activations(), biases, 1);
    for l in &net.layers {
        ef.extend_from_slice(l.weight.data());
    }
    g.edge_feat = Tensor::matrix(g.num_edges(), 1, ef)?;
    if direction == Direction::Bidirectional {
        let mode = BackwardFeature::for_group(g.hidden_group());
        g = add_backward_edges(g, mode)?;
    }
    Ok(g)
}

/// Graph of a CNN: one vertex per channel, kernels as edge features
/// zero-padded to `kernel_max` with the kernel anchored at the top-left
/// corner (tap `(r, c)` lands at `r · kw_max + c`); dense-layer weights sit
/// at position 0.
pub fn build_graph_cnn(net: &CnnParams, direction: Direction) -> Result<ParamGraph> {
    net.validate()?;
    let (mh, mw) = net.kernel_max;
    let width = mh * mw;
    let n_layers = net.num_layers();
    let biases: Vec<&[f64]> = (0..n_layers).map(|l| net.layer(l).1).collect();
    let (mut g, mut ef) = ParamGraph::skeleton(net.layer_dims(), net.activations(), biases, width);
    for conv in &net.convs {
        let (kh, kw) = conv.kernel_size();
        if kh > mh || kw > mw {
            return Err(Error::KernelTooLarge {
                got: (kh, kw),
                max: net.kernel_max,
            });
        }
        let k = conv.kernels.data();
        for i in 0..conv.out_channels() {
            for j in 0..conv.in_channels() {
                let mut row = vec![0.0; width];
                for r in 0..kh {
                    for c in 0..kw {
                        row[r * mw + c] = k[((i * conv.in_channels() + j) * kh + r) * kw + c];
                    }
                }
                ef.extend(row);
            }
        }
    }
    for layer in &net.head {
        for &w in layer.weight.data() {
            ef.push(w);
            ef.extend(std::iter::repeat_n(0.0, width - 1));
        }
    }
    g.edge_feat = Tensor::matrix(g.num_edges(), width, ef)?;
    if direction == Direction::Bidirectional {
        let mode = BackwardFeature::for_group(g.hidden_group());
        g = add_backward_edges(g, mode)?;
    }
    Ok(g)
}

/// Materializes backward edges. Reciprocal mode fails on any weight with
/// magnitude below the division guard, listing `(edge, coordinate)` pairs.
pub fn add_backward_edges(mut g: ParamGraph, mode: BackwardFeature) -> Result<ParamGraph> {
    let back = match mode {
        BackwardFeature::Copy => g.edge_feat.clone(),
        BackwardFeature::Reciprocal => {
            let cols = g.edge_dim();
            let bad: Vec<(usize, usize)> = g
                .edge_feat
                .data()
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() < DIV_EPS)
                .map(|(k, _)| (k / cols, k % cols))
                .collect();
            if !bad.is_empty() {
                return Err(Error::ZeroWeights(bad));
            }
            g.edge_feat.map(|v| 1.0 / v)
        }
    };
    g.backward_feat = Some(back);
    Ok(g)
}

/// Acts on raw graph features the way `g` acts on the network: hidden
/// vertex features scale like biases, edge features like weights and
/// backward features by the inverse factor (or like weights under `Copy`).
pub fn transform_graph(
    graph: &ParamGraph,
    g: &OrbitElement,
    backward: BackwardFeature,
) -> Result<ParamGraph> {
    let big_l = graph.num_layers();
    if g.hidden.len() + 1 != big_l.max(1) {
        return Err(Error::InvalidNetwork("orbit depth does not match graph".into()));
    }
    // source vertex and multiplier for each new vertex
    let n = graph.num_vertices();
    let mut src_of = (0..n).collect::<Vec<_>>();
    let mut q = vec![1.0; n];
    for (h, act) in g.hidden.iter().enumerate() {
        let l = h + 1;
        if act.len() != graph.layer_dims[l] {
            return Err(Error::InvalidNetwork(format!("orbit width mismatch at layer {l}")));
        }
        for i in 0..act.len() {
            let v = graph.vertex_id(l, i);
            src_of[v] = graph.vertex_id(l, act.perm[i]);
            q[v] = act.factor(i);
        }
    }
    let mut out = graph.clone();
    for v in 0..n {
        let f = q[v];
        let s = graph.vertex_feat.row_slice(src_of[v]).to_vec();
        let cols = out.vertex_feat.cols();
        out.vertex_feat.data_mut()[v * cols..(v + 1) * cols]
            .iter_mut()
            .zip(s)
            .for_each(|(d, x)| *d = f * x);
    }
    // forward edge id of (src, dst) within a layer: row-major over W_ℓ
    let eoff = graph.edge_offsets();
    let edge_id = |s: usize, d: usize| {
        let (l, i) = graph.vertex_position(d);
        let (_, j) = graph.vertex_position(s);
        eoff[l - 1] + i * graph.layer_dims[l - 1] + j
    };
    let cols = graph.edge_dim();
    for k in 0..graph.num_edges() {
        let (s, d) = (graph.edge_src[k], graph.edge_dst[k]);
        let from = edge_id(src_of[s], src_of[d]);
        let f = q[d] / q[s];
        for c in 0..cols {
            out.edge_feat.data_mut()[k * cols + c] = f * graph.edge_feat.data()[from * cols + c];
        }
        if let (Some(b_in), Some(b_out)) = (&graph.backward_feat, &mut out.backward_feat) {
            let fb = match backward {
                BackwardFeature::Reciprocal => 1.0 / f,
                BackwardFeature::Copy => f,
            };
            for c in 0..cols {
                b_out.data_mut()[k * cols + c] = fb * b_in.data()[from * cols + c];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::zoo::{ConvLayer, FfnnLayer};

    fn mlp(dims: &[usize], act: ActivationDescriptor, seed: u64) -> FfnnParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acts = vec![act; dims.len() - 2];
        acts.push(ActivationDescriptor::identity());
        FfnnParams::random(dims, &acts, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn counts_and_raw_features() {
        let net = mlp(&[2, 4, 1], ActivationDescriptor::relu(), 0);
        let g = build_graph(&net, Direction::Forward).unwrap();
        assert_eq!(g.num_vertices(), 7);
        assert_eq!(g.num_edges(), 12);
        assert_eq!(g.vertex_feat.row_slice(0), &[1.0]);
        assert_eq!(g.vertex_feat.row_slice(1), &[1.0]);
        for i in 0..4 {
            assert_eq!(g.vertex_feat.get(2 + i, 0), net.layers[0].bias[i]);
        }
        // edge (layer 1, target 2, source 1)
        let k = 2 * 2 + 1;
        assert_eq!((g.edge_src[k], g.edge_dst[k]), (1, 4));
        assert_eq!(g.edge_feat.get(k, 0), net.layers[0].weight.get(2, 1));
        assert_eq!(g.role(0), VertexRole::Input);
        assert_eq!(g.role(3), VertexRole::Hidden);
        assert_eq!(g.role(6), VertexRole::Output);
    }

    #[test]
    fn backward_features() {
        let net = FfnnParams::new(vec![
            FfnnLayer {
                weight: Tensor::scalar(0.5),
                bias: vec![0.1],
                activation: ActivationDescriptor::relu(),
            },
            FfnnLayer {
                weight: Tensor::scalar(-0.7),
                bias: vec![0.0],
                activation: ActivationDescriptor::identity(),
            },
        ])
        .unwrap();
        let g = build_graph(&net, Direction::Bidirectional).unwrap();
        assert_eq!(g.backward_feat.as_ref().unwrap().data(), &[2.0, 1.0 / -0.7]);
        let fwd = build_graph(&net, Direction::Forward).unwrap();
        let copy = add_backward_edges(fwd.clone(), BackwardFeature::Copy).unwrap();
        assert_eq!(copy.backward_feat.as_ref().unwrap().data(), &[0.5, -0.7]);
        assert_eq!(copy.backward_feat.as_ref().unwrap().rows(), copy.num_edges());

        let mut zero = fwd;
        zero.edge_feat.data_mut()[1] = 0.0;
        match add_backward_edges(zero, BackwardFeature::Reciprocal) {
            Err(Error::ZeroWeights(v)) => assert_eq!(v, vec![(1, 0)]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cnn_graph_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = CnnParams::random(
            &[1, 4, 2],
            2,
            (3, 3),
            ActivationDescriptor::relu(),
            1.0,
            &mut rng,
        )
        .unwrap();
        net.kernel_max = (5, 5);
        let g = build_graph_cnn(&net, Direction::Forward).unwrap();
        assert_eq!(g.num_vertices(), 1 + 4 + 2 + 2);
        assert_eq!(g.edge_dim(), 25);
        let row = g.edge_feat.row_slice(0);
        let k = net.convs[0].kernels.data();
        for r in 0..5 {
            for c in 0..5 {
                let expect = if r < 3 && c < 3 { k[r * 3 + c] } else { 0.0 };
                assert_eq!(row[r * 5 + c], expect);
            }
        }
        // dense head weights at position 0
        let last = g.edge_feat.row_slice(g.num_edges() - 1);
        assert_eq!(last[0], net.head[0].weight.get(1, 1));
        assert!(last[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_kernels_have_one_nonzero() {
        let conv = ConvLayer {
            kernels: Tensor::new(vec![2, 1, 1, 1], vec![0.3, -0.4]).unwrap(),
            bias: vec![0.0, 0.0],
            activation: ActivationDescriptor::relu(),
        };
        let net = CnnParams {
            convs: vec![conv],
            head: vec![FfnnLayer {
                weight: Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap(),
                bias: vec![0.0],
                activation: ActivationDescriptor::identity(),
            }],
            kernel_max: (3, 3),
        };
        let g = build_graph_cnn(&net, Direction::Forward).unwrap();
        for k in 0..2 {
            assert_eq!(g.edge_feat.row_slice(k).iter().filter(|v| **v != 0.0).count(), 1);
        }
        let mut big = net.clone();
        big.kernel_max = (0, 0);
        assert!(build_graph_cnn(&big, Direction::Forward).is_err());
    }

    #[test]
    fn dump_lists_every_element() {
        let net = mlp(&[2, 3, 1], ActivationDescriptor::tanh(), 1);
        let g = build_graph(&net, Direction::Bidirectional).unwrap();
        let d = g.debug_dump();
        assert_eq!(d.lines().filter(|l| l.starts_with("v ")).count(), 6);
        assert_eq!(d.lines().filter(|l| l.starts_with("e ")).count(), 9);
        assert_eq!(d.lines().filter(|l| l.starts_with("b ")).count(), 9);
        assert!(d.starts_with("v 0 0 1.000000e0\n"));
    }
}
