use serde::{Deserialize, Serialize};

use super::build::ParamGraph;

/// Sharing classes for positional encodings.
///
/// Vertices: each input and each output vertex has its own class, all
/// hidden vertices of one layer share one. Edges of layer `ℓ` are keyed by
/// `(ℓ, source index if the source is an input, target index if the target
/// is an output)`; hidden-to-hidden edges of a layer therefore share a
/// class, and for a single-layer network every edge is distinct.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeAssignment {
    pub vertex_class: Vec<usize>,
    pub edge_class: Vec<usize>,
    pub num_vertex_classes: usize,
    pub num_edge_classes: usize,
}

/// Class counts determined by the widths alone.
pub fn pe_class_counts(dims: &[usize]) -> (usize, usize) {
    let big_l = dims.len() - 1;
    let v = dims[0] + (big_l - 1) + dims[big_l];
    let e = (1..=big_l).map(|l| edge_factor(dims, l)).map(|(a, b)| a * b).sum();
    (v, e)
}

/// (#source keys, #target keys) for edges of layer `l`.
fn edge_factor(dims: &[usize], l: usize) -> (usize, usize) {
    let big_l = dims.len() - 1;
    let s = if l == 1 { dims[0] } else { 1 };
    let t = if l == big_l { dims[big_l] } else { 1 };
    (s, t)
}

pub fn assign_pe(graph: &ParamGraph) -> PeAssignment {
    let dims = &graph.layer_dims;
    let big_l = graph.num_layers();
    let (nv, ne) = pe_class_counts(dims);
    let vertex_class = (0..graph.num_vertices())
        .map(|v| {
            let (l, i) = graph.vertex_position(v);
            if l == 0 {
                i
            } else if l < big_l {
                dims[0] + l - 1
            } else {
                dims[0] + big_l - 1 + i
            }
        })
        .collect();
    let mut base = vec![0; big_l + 1];
    for l in 1..big_l {
        let (s, t) = edge_factor(dims, l);
        base[l + 1] = base[l] + s * t;
    }
    let edge_class = (0..graph.num_edges())
        .map(|k| {
            let (ls, j) = graph.vertex_position(graph.edge_src[k]);
            let (l, i) = graph.vertex_position(graph.edge_dst[k]);
            debug_assert_eq!(ls + 1, l);
            let (_, t) = edge_factor(dims, l);
            let sk = if l == 1 { j } else { 0 };
            let tk = if l == big_l { i } else { 0 };
            base[l] + sk * t + tk
        })
        .collect();
    PeAssignment {
        vertex_class,
        edge_class,
        num_vertex_classes: nv,
        num_edge_classes: ne,
    }
}
