use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LegislativeTree, TreeNodeKind};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Section,
    Article,
}

impl NodeKind {
    fn flag(self) -> char {
        match self {
            NodeKind::Section => 's',
            NodeKind::Article => 'a',
        }
    }

    fn from_flag(c: char) -> Option<Self> {
        match c {
            's' => Some(NodeKind::Section),
            'a' => Some(NodeKind::Article),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub kind: NodeKind,
    /// Article id, or the heading path joined by `" > "` for sections.
    pub source_id: String,
    /// Heading for sections, body for articles.
    pub text: String,
}

/// Compressed adjacency: neighbors of `v` are `targets[offsets[v]..offsets[v+1]]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Adjacency {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Adjacency {
    fn build(n: usize, pairs: impl Iterator<Item = (usize, usize)> + Clone) -> Self {
        let mut counts = vec![0usize; n + 1];
        for (a, _) in pairs.clone() {
            counts[a + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut targets = vec![0; counts[n]];
        for (a, b) in pairs {
            targets[fill[a]] = b;
            fill[a] += 1;
        }
        for v in 0..n {
            targets[counts[v]..counts[v + 1]].sort_unstable();
        }
        Adjacency { offsets: counts, targets }
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// Directed acyclic heading graph: sections point to their children.
#[derive(Debug, Clone, PartialEq)]
pub struct LegislativeGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<(usize, usize)>,
    children: Adjacency,
    parents: Adjacency,
    by_source: HashMap<String, usize>,
}

pub const PATH_SEPARATOR: &str = " > ";

impl LegislativeGraph {
    pub fn from_tree(tree: &LegislativeTree, corpus: &Corpus) -> Self {
        let nodes: Vec<GraphNode> = tree
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match &n.kind {
                TreeNodeKind::Section { heading, .. } => GraphNode {
                    kind: NodeKind::Section,
                    source_id: tree.section_path(i).expect("section").join(PATH_SEPARATOR),
                    text: heading.clone(),
                },
                TreeNodeKind::Article { article } => GraphNode {
                    kind: NodeKind::Article,
                    source_id: corpus.articles[*article].id.clone(),
                    text: corpus.articles[*article].text.clone(),
                },
            })
            .collect();
        let edges = tree
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.parent.map(|p| (p, i)))
            .collect();
        Self::from_parts(nodes, edges).expect("a corpus tree is a valid graph")
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        Self::from_tree(&corpus.tree, corpus)
    }

    /// Validates the edge list: endpoints in range, every node has at most
    /// one parent, articles have no children, and there is no cycle.
    pub fn from_parts(nodes: Vec<GraphNode>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = nodes.len();
        let mut by_source = HashMap::with_capacity(n);
        for (i, node) in nodes.iter().enumerate() {
            if by_source.insert(node.source_id.clone(), i).is_some() {
                return Err(invalid(format!("duplicate graph node id {:?}", node.source_id)));
            }
        }
        let mut parent = vec![None; n];
        for &(p, c) in &edges {
            if p >= n || c >= n {
                return Err(invalid(format!("edge ({p}, {c}) outside {n} nodes")));
            }
            if nodes[p].kind == NodeKind::Article {
                return Err(invalid(format!("article node {:?} has a child", nodes[p].source_id)));
            }
            if parent[c].replace(p).is_some() {
                return Err(invalid(format!("node {:?} has two parents", nodes[c].source_id)));
            }
        }
        for start in 0..n {
            let mut v = start;
            let mut steps = 0;
            while let Some(p) = parent[v] {
                v = p;
                steps += 1;
                if steps > n {
                    return Err(invalid("heading graph contains a cycle"));
                }
            }
        }
        let children = Adjacency::build(n, edges.iter().copied());
        let parents = Adjacency::build(n, edges.iter().map(|&(p, c)| (c, p)));
        Ok(LegislativeGraph {
            nodes,
            edges,
            children,
            parents,
            by_source,
        })
    }

    /// Graph from a parent array; nodes without children become articles.
    pub fn from_parent_array(parents: &[Option<usize>]) -> Result<Self> {
        let mut has_child = vec![false; parents.len()];
        for p in parents.iter().flatten() {
            if *p >= parents.len() {
                return Err(invalid(format!("parent {p} out of range")));
            }
            has_child[*p] = true;
        }
        let nodes = has_child
            .iter()
            .enumerate()
            .map(|(i, &inner)| GraphNode {
                kind: if inner || parents[i].is_none() {
                    NodeKind::Section
                } else {
                    NodeKind::Article
                },
                source_id: format!("n{i}"),
                text: String::new(),
            })
            .collect();
        let edges = parents.iter().enumerate().filter_map(|(c, p)| p.map(|p| (p, c))).collect();
        Self::from_parts(nodes, edges)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, v: usize) -> &GraphNode {
        &self.nodes[v]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn children(&self, v: usize) -> &[usize] {
        self.children.neighbors(v)
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        self.parents.neighbors(v)
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.parents(v).is_empty()).collect()
    }

    pub fn node_by_source(&self, id: &str) -> Option<usize> {
        self.by_source.get(id).copied()
    }

    pub fn article_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.nodes[v].kind == NodeKind::Article).collect()
    }

    /// Weakly connected components, as a component label per node.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.len()];
        let mut next = 0;
        for start in 0..self.len() {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(v) = stack.pop() {
                for &u in self.children(v).iter().chain(self.parents(v)) {
                    if label[u] == usize::MAX {
                        label[u] = next;
                        stack.push(u);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Edge list as TSV: parent id, child id, kind flags (`ss` or `sa`).
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("parent\tchild\tkinds\n");
        for &(p, c) in &self.edges {
            let (a, b) = (&self.nodes[p], &self.nodes[c]);
            let _ = writeln!(out, "{}\t{}\t{}{}", a.source_id, b.source_id, a.kind.flag(), b.kind.flag());
        }
        out
    }

    /// Rebuilds the structure from [`to_tsv`](Self::to_tsv) output. Node
    /// texts are not part of the format and come back empty. Isolated nodes
    /// are not representable.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut nodes: Vec<GraphNode> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut edges = Vec::new();
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: "<graph tsv>".into(),
            line,
            msg,
        };
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [p, c, flags] = cols[..] else {
                return Err(parse_err(ln + 1, format!("expected 3 columns, got {}", cols.len())));
            };
            let kinds: Vec<NodeKind> = flags.chars().filter_map(NodeKind::from_flag).collect();
            if kinds.len() != 2 || flags.chars().count() != 2 {
                return Err(parse_err(ln + 1, format!("bad kind flags {flags:?}")));
            }
            let mut ids = [0usize; 2];
            for (slot, (id, kind)) in ids.iter_mut().zip([(p, kinds[0]), (c, kinds[1])]) {
                *slot = match index.get(id) {
                    Some(&v) if nodes[v].kind == kind => v,
                    Some(_) => return Err(parse_err(ln + 1, format!("node {id:?} has conflicting kinds"))),
                    None => {
                        nodes.push(GraphNode {
                            kind,
                            source_id: id.to_string(),
                            text: String::new(),
                        });
                        index.insert(id.to_string(), nodes.len() - 1);
                        nodes.len() - 1
                    }
                };
            }
            edges.push((ids[0], ids[1]));
        }
        Self::from_parts(nodes, edges)
    }
}
