use std::collections::VecDeque;
use std::rc::Rc;

use crate::error::{invalid, Result};
use crate::tensor::SparseMatrix;

use super::LegislativeGraph;

/// Message-passing view of a node set. Edge `e` carries a message from
/// `src[e]` to `dst[e]`; edges are grouped by destination, sources ascending.
/// `gcn_degree` is the full-graph in-degree (self-loop included when enabled)
/// so that normalization on a subgraph matches the full graph.
#[derive(Debug, Clone)]
pub struct MessageGraph {
    pub num_nodes: usize,
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    pub self_loops: bool,
    pub gcn_degree: Vec<f64>,
}

impl MessageGraph {
    /// With `symmetrize`, every tree edge carries messages both ways;
    /// otherwise only parent to child.
    pub fn new(graph: &LegislativeGraph, symmetrize: bool, self_loops: bool) -> Self {
        let n = graph.len();
        let lists: Vec<Vec<usize>> = (0..n).map(|v| in_neighbors(graph, v, symmetrize)).collect();
        Self::from_lists(&lists, self_loops, None)
    }

    fn from_lists(lists: &[Vec<usize>], self_loops: bool, degree: Option<Vec<f64>>) -> Self {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for (v, list) in lists.iter().enumerate() {
            let mut inserted = !self_loops;
            for &u in list {
                if !inserted && u > v {
                    src.push(v);
                    dst.push(v);
                    inserted = true;
                }
                src.push(u);
                dst.push(v);
            }
            if !inserted {
                src.push(v);
                dst.push(v);
            }
        }
        let gcn_degree = degree.unwrap_or_else(|| {
            let mut d = vec![0.0; lists.len()];
            for &v in &dst {
                d[v] += 1.0;
            }
            d
        });
        MessageGraph {
            num_nodes: lists.len(),
            src: src.into(),
            dst: dst.into(),
            self_loops,
            gcn_degree,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    /// `D^-1/2 Â D^-1/2`, rows indexed by destination.
    pub fn gcn_matrix(&self) -> SparseMatrix {
        let mut offsets = vec![0; self.num_nodes + 1];
        for &v in self.dst.iter() {
            offsets[v + 1] += 1;
        }
        for i in 0..self.num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let weights = self
            .src
            .iter()
            .zip(self.dst.iter())
            .map(|(&u, &v)| {
                let d = self.gcn_degree[u] * self.gcn_degree[v];
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        SparseMatrix {
            rows: self.num_nodes,
            cols: self.num_nodes,
            offsets,
            indices: self.src.to_vec(),
            weights,
        }
    }

    /// Mean over neighbors excluding the node itself; zero row when isolated.
    pub fn neighbor_mean_matrix(&self) -> SparseMatrix {
        let mut offsets = vec![0; self.num_nodes + 1];
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        let mut e = 0;
        for v in 0..self.num_nodes {
            let start = indices.len();
            while e < self.dst.len() && self.dst[e] == v {
                if self.src[e] != v {
                    indices.push(self.src[e]);
                }
                e += 1;
            }
            let k = indices.len() - start;
            weights.extend(std::iter::repeat_n(1.0 / k.max(1) as f64, k));
            offsets[v + 1] = indices.len();
        }
        SparseMatrix {
            rows: self.num_nodes,
            cols: self.num_nodes,
            offsets,
            indices,
            weights,
        }
    }
}

fn in_neighbors(graph: &LegislativeGraph, v: usize, symmetrize: bool) -> Vec<usize> {
    let mut out: Vec<usize> = graph.parents(v).to_vec();
    if symmetrize {
        out.extend_from_slice(graph.children(v));
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Induced subgraph around a batch, with local ids in ascending global order.
#[derive(Debug, Clone)]
pub struct SubGraph {
    pub nodes: Vec<usize>,
    pub batch_local: Vec<usize>,
    pub messages: MessageGraph,
}

impl SubGraph {
    pub fn local(&self, global: usize) -> Option<usize> {
        self.nodes.binary_search(&global).ok()
    }

    pub fn global(&self, local: usize) -> usize {
        self.nodes[local]
    }
}

/// Every node within `hops` undirected steps of a batch node, with the edges
/// of `full` restricted to that set.
pub fn extract_l_hop_subgraph(
    graph: &LegislativeGraph,
    full: &MessageGraph,
    batch: &[usize],
    hops: usize,
) -> Result<SubGraph> {
    if hops == 0 {
        return Err(invalid("subgraph radius must be at least 1"));
    }
    if batch.is_empty() {
        return Err(invalid("empty subgraph batch"));
    }
    let n = graph.len();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for &b in batch {
        if b >= n {
            return Err(invalid(format!("unknown node id {b}")));
        }
        if dist[b] != 0 {
            dist[b] = 0;
            queue.push_back(b);
        }
    }
    while let Some(v) = queue.pop_front() {
        if dist[v] == hops {
            continue;
        }
        for &u in graph.parents(v).iter().chain(graph.children(v)) {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    let nodes: Vec<usize> = (0..n).filter(|&v| dist[v] != usize::MAX).collect();
    let mut local = vec![usize::MAX; n];
    for (i, &v) in nodes.iter().enumerate() {
        local[v] = i;
    }
    let mut lists = vec![Vec::new(); nodes.len()];
    for (&u, &v) in full.src.iter().zip(full.dst.iter()) {
        if u != v && local[u] != usize::MAX && local[v] != usize::MAX {
            lists[local[v]].push(local[u]);
        }
    }
    let degree = nodes.iter().map(|&v| full.gcn_degree[v]).collect();
    let messages = MessageGraph::from_lists(&lists, full.self_loops, Some(degree));
    Ok(SubGraph {
        batch_local: batch.iter().map(|&b| local[b]).collect(),
        nodes,
        messages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path4() -> LegislativeGraph {
        // a - b - c - d as a chain of parents
        LegislativeGraph::from_parent_array(&[None, Some(0), Some(1), Some(2)]).unwrap()
    }

    #[test]
    fn path_graph_two_hops() {
        let g = path4();
        let full = MessageGraph::new(&g, true, true);
        let sub = extract_l_hop_subgraph(&g, &full, &[0], 2).unwrap();
        assert_eq!(sub.nodes, [0, 1, 2]);
        assert_eq!(sub.batch_local, [0]);
    }

    #[test]
    fn self_loops_are_sorted_into_place() {
        let g = path4();
        let m = MessageGraph::new(&g, true, true);
        let pairs: Vec<(usize, usize)> = m.dst.iter().copied().zip(m.src.iter().copied()).collect();
        assert_eq!(pairs, [(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2), (2, 3), (3, 2), (3, 3)]);
        assert_eq!(m.gcn_degree, [2.0, 3.0, 3.0, 2.0]);
        let directed = MessageGraph::new(&g, false, false);
        assert_eq!(directed.num_edges(), 3);
    }

    #[test]
    fn full_batch_is_full_graph() {
        let g = LegislativeGraph::from_parent_array(&[None, Some(0), Some(0), Some(1), None, Some(4)]).unwrap();
        let full = MessageGraph::new(&g, true, true);
        let sub = extract_l_hop_subgraph(&g, &full, &g.article_nodes(), 3).unwrap();
        assert_eq!(sub.nodes, (0..g.len()).collect::<Vec<_>>());
        assert_eq!(sub.messages.src, full.src);
        assert_eq!(sub.messages.dst, full.dst);
    }

    #[test]
    fn bad_arguments() {
        let g = path4();
        let full = MessageGraph::new(&g, true, true);
        assert!(extract_l_hop_subgraph(&g, &full, &[9], 1).is_err());
        assert!(extract_l_hop_subgraph(&g, &full, &[], 1).is_err());
        assert!(extract_l_hop_subgraph(&g, &full, &[0], 0).is_err());
    }

    #[test]
    fn neighbor_mean_excludes_self() {
        let g = path4();
        let m = MessageGraph::new(&g, true, true).neighbor_mean_matrix();
        let dense = m.to_dense();
        assert_eq!(dense.row(1), [0.5, 0.0, 0.5, 0.0]);
        assert_eq!(dense.row(0), [0.0, 1.0, 0.0, 0.0]);
    }
}
