//! The legislative graph, node features, subgraph extraction and GNN layers.

mod features;
mod gnn;
mod message;
mod structure;

pub use features::{init_node_features, FeatureSource, NodeFeatures};
pub use gnn::{Activation, Gnn, GnnArch, GnnConfig, GnnOutput};
pub use message::{extract_l_hop_subgraph, MessageGraph, SubGraph};
pub use structure::{Adjacency, GraphNode, LegislativeGraph, NodeKind, PATH_SEPARATOR};
