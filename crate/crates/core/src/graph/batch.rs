use std::rc::Rc;

use super::build::{ParamGraph, VertexRole};
use super::pe::assign_pe;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Disjoint union of graphs sharing one architecture, with the index sets
/// the metanetwork needs. Vertices and edges are graph-major.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub num_graphs: usize,
    pub layer_dims: Vec<usize>,
    pub vertices_per_graph: usize,
    pub edges_per_graph: usize,
    pub vertex_feat: Tensor,
    pub edge_feat: Tensor,
    pub backward_feat: Option<Tensor>,
    pub edge_src: Rc<Vec<usize>>,
    pub edge_dst: Rc<Vec<usize>>,
    pub vertex_class: Rc<Vec<usize>>,
    pub edge_class: Rc<Vec<usize>>,
    /// Vertex ids by role.
    pub inputs: Rc<Vec<usize>>,
    pub hidden: Rc<Vec<usize>>,
    pub outputs: Rc<Vec<usize>>,
    /// Graph id of each hidden vertex.
    pub hidden_graph: Rc<Vec<usize>>,
    /// Edge ids grouped by the role of their target (forward direction)
    /// or source (backward direction).
    pub fw_to_hidden: Rc<Vec<usize>>,
    pub fw_to_output: Rc<Vec<usize>>,
    pub bw_to_hidden: Rc<Vec<usize>>,
    pub bw_to_input: Rc<Vec<usize>>,
}

impl GraphBatch {
    pub fn new(graphs: &[&ParamGraph]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::InvalidNetwork("empty batch".into()))?;
        let bidir = first.is_bidirectional();
        for g in graphs {
            if g.layer_dims != first.layer_dims
                || g.edge_dim() != first.edge_dim()
                || g.is_bidirectional() != bidir
            {
                return Err(Error::InvalidNetwork(
                    "all graphs in a batch must share one architecture".into(),
                ));
            }
        }
        let nv = first.num_vertices();
        let ne = first.num_edges();
        let pe = assign_pe(first);
        let roles: Vec<VertexRole> = (0..nv).map(|v| first.role(v)).collect();

        let mut b = GraphBatchBuilder::default();
        for (gi, g) in graphs.iter().enumerate() {
            let vo = gi * nv;
            b.vf.extend_from_slice(g.vertex_feat.data());
            b.ef.extend_from_slice(g.edge_feat.data());
            if let Some(bf) = &g.backward_feat {
                b.bf.extend_from_slice(bf.data());
            }
            b.vc.extend_from_slice(&pe.vertex_class);
            b.ec.extend_from_slice(&pe.edge_class);
            for (v, role) in roles.iter().enumerate() {
                match role {
                    VertexRole::Input => b.inputs.push(vo + v),
                    VertexRole::Hidden => {
                        b.hidden.push(vo + v);
                        b.hidden_graph.push(gi);
                    }
                    VertexRole::Output => b.outputs.push(vo + v),
                }
            }
            for k in 0..ne {
                let (s, d) = (first.edge_src[k], first.edge_dst[k]);
                let e = gi * ne + k;
                b.src.push(vo + s);
                b.dst.push(vo + d);
                match roles[d] {
                    VertexRole::Hidden => b.fw_h.push(e),
                    VertexRole::Output => b.fw_o.push(e),
                    VertexRole::Input => unreachable!("no edge enters an input"),
                }
                match roles[s] {
                    VertexRole::Hidden => b.bw_h.push(e),
                    VertexRole::Input => b.bw_i.push(e),
                    VertexRole::Output => unreachable!("no edge leaves an output"),
                }
            }
        }
        let n = graphs.len();
        let ed = first.edge_dim();
        Ok(GraphBatch {
            num_graphs: n,
            layer_dims: first.layer_dims.clone(),
            vertices_per_graph: nv,
            edges_per_graph: ne,
            vertex_feat: Tensor::matrix(n * nv, first.vertex_feat.cols(), b.vf)?,
            edge_feat: Tensor::matrix(n * ne, ed, b.ef)?,
            backward_feat: if bidir {
                Some(Tensor::matrix(n * ne, ed, b.bf)?)
            } else {
                None
            },
            edge_src: Rc::new(b.src),
            edge_dst: Rc::new(b.dst),
            vertex_class: Rc::new(b.vc),
            edge_class: Rc::new(b.ec),
            inputs: Rc::new(b.inputs),
            hidden: Rc::new(b.hidden),
            outputs: Rc::new(b.outputs),
            hidden_graph: Rc::new(b.hidden_graph),
            fw_to_hidden: Rc::new(b.fw_h),
            fw_to_output: Rc::new(b.fw_o),
            bw_to_hidden: Rc::new(b.bw_h),
            bw_to_input: Rc::new(b.bw_i),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_graphs * self.vertices_per_graph
    }

    pub fn num_edges(&self) -> usize {
        self.num_graphs * self.edges_per_graph
    }

    pub fn is_bidirectional(&self) -> bool {
        self.backward_feat.is_some()
    }
}

#[derive(Default)]
struct GraphBatchBuilder {
    vf: Vec<f64>,
    ef: Vec<f64>,
    bf: Vec<f64>,
    src: Vec<usize>,
    dst: Vec<usize>,
    vc: Vec<usize>,
    ec: Vec<usize>,
    inputs: Vec<usize>,
    hidden: Vec<usize>,
    outputs: Vec<usize>,
    hidden_graph: Vec<usize>,
    fw_h: Vec<usize>,
    fw_o: Vec<usize>,
    bw_h: Vec<usize>,
    bw_i: Vec<usize>,
}
