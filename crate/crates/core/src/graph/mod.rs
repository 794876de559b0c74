//! Parameter graphs: neurons as vertices, weights as edges.

mod batch;
mod build;
mod pe;

pub use batch::GraphBatch;
pub use build::{
    add_backward_edges, build_graph, build_graph_cnn, transform_graph, BackwardFeature, Direction,
    ParamGraph, VertexRole,
};
pub use pe::{assign_pe, pe_class_counts, PeAssignment};
