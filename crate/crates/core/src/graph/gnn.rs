//! Graph neural network layers on the tape: GCN, GraphSAGE, GAT and GATv2.

use std::rc::Rc;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{glorot, NodeId, ParamId, ParamStore, SparseMatrix, Tape, Tensor};

use super::MessageGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnArch {
    Gcn,
    Sage,
    Gat,
    Gatv2,
}

impl GnnArch {
    pub const ALL: [GnnArch; 4] = [GnnArch::Gcn, GnnArch::Sage, GnnArch::Gat, GnnArch::Gatv2];

    pub fn as_str(self) -> &'static str {
        match self {
            GnnArch::Gcn => "gcn",
            GnnArch::Sage => "sage",
            GnnArch::Gat => "gat",
            GnnArch::Gatv2 => "gatv2",
        }
    }

    pub fn is_attention(self) -> bool {
        matches!(self, GnnArch::Gat | GnnArch::Gatv2)
    }
}

impl FromStr for GnnArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GnnArch::ALL
            .into_iter()
            .find(|a| a.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown GNN architecture {s:?} (gcn, sage, gat, gatv2)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Tanh,
    Gelu,
}

impl Activation {
    fn apply(self, tape: &mut Tape<'_>, x: NodeId) -> NodeId {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu => tape.leaky_relu(x, 0.01),
            Activation::Tanh => tape.tanh(x),
            Activation::Gelu => tape.gelu(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub arch: GnnArch,
    pub layers: usize,
    pub in_dim: usize,
    /// Width of hidden layers after concatenating heads.
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub activation: Activation,
    pub self_loops: bool,
    pub symmetrize: bool,
    /// Slope of the LeakyReLU inside attention scores.
    pub negative_slope: f64,
    /// Output is `X + f(X)` instead of `f(X)`.
    pub residual: bool,
    /// Zero the last layer's weights so a residual network starts as the identity.
    pub identity_init: bool,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            arch: GnnArch::Gatv2,
            layers: 3,
            in_dim: 64,
            hidden_dim: 64,
            out_dim: 64,
            heads: 1,
            activation: Activation::Relu,
            self_loops: true,
            symmetrize: true,
            negative_slope: 0.2,
            residual: false,
            identity_init: false,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 {
            return Err(invalid("GNN needs at least one layer and one head"));
        }
        if self.in_dim == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(invalid("GNN dimensions must be positive"));
        }
        if self.arch.is_attention() && self.hidden_dim % self.heads != 0 {
            return Err(invalid(format!("hidden dim {} not divisible into {} heads", self.hidden_dim, self.heads)));
        }
        if self.residual && self.in_dim != self.out_dim {
            return Err(invalid("residual GNN needs equal input and output dims"));
        }
        if self.identity_init && !self.residual {
            return Err(invalid("identity initialization requires the residual connection"));
        }
        Ok(())
    }

    fn heads(&self) -> usize {
        if self.arch.is_attention() {
            self.heads
        } else {
            1
        }
    }

    /// (input width, per-head output width) of layer `l`.
    fn layer_dims(&self, l: usize) -> (usize, usize) {
        let din = if l == 0 { self.in_dim } else { self.hidden_dim };
        let dout = if l + 1 == self.layers {
            self.out_dim
        } else {
            self.hidden_dim / self.heads()
        };
        (din, dout)
    }
}

#[derive(Debug, Clone)]
enum HeadIds {
    Linear { w: ParamId },
    Gat { w: ParamId, att_dst: ParamId, att_src: ParamId },
    Gatv2 { w_src: ParamId, w_dst: ParamId, att: ParamId },
}

#[derive(Debug, Clone)]
struct LayerIds {
    heads: Vec<HeadIds>,
    bias: ParamId,
}

/// Output of one forward pass: final node states plus per-layer, per-head
/// attention coefficients (empty for gcn and sage).
pub struct GnnOutput {
    pub z: NodeId,
    pub attention: Vec<Vec<NodeId>>,
}

#[derive(Debug, Clone)]
pub struct Gnn {
    pub config: GnnConfig,
    pub store: ParamStore,
    layers: Vec<LayerIds>,
}

impl Gnn {
    pub fn new(config: GnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let (din, dout) = config.layer_dims(l);
            let last = l + 1 == config.layers;
            let zero = last && config.identity_init;
            let weight = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: String, rows: usize, cols: usize| {
                let t = glorot(rng, rows, cols);
                store.add(&name, if zero { Tensor::zeros(&[rows, cols]) } else { t })
            };
            let heads = (0..config.heads())
                .map(|h| {
                    let p = |n: &str| format!("gnn.{l}.{h}.{n}");
                    match config.arch {
                        GnnArch::Gcn => HeadIds::Linear {
                            w: weight(&mut store, &mut rng, p("w"), din, dout),
                        },
                        GnnArch::Sage => HeadIds::Linear {
                            w: weight(&mut store, &mut rng, p("w"), 2 * din, dout),
                        },
                        GnnArch::Gat => HeadIds::Gat {
                            w: weight(&mut store, &mut rng, p("w"), din, dout),
                            att_dst: store.add(&p("att_dst"), glorot(&mut rng, dout, 1)),
                            att_src: store.add(&p("att_src"), glorot(&mut rng, dout, 1)),
                        },
                        GnnArch::Gatv2 => HeadIds::Gatv2 {
                            w_src: weight(&mut store, &mut rng, p("w_src"), din, dout),
                            w_dst: weight(&mut store, &mut rng, p("w_dst"), din, dout),
                            att: store.add(&p("att"), glorot(&mut rng, dout, 1)),
                        },
                    }
                })
                .collect();
            let width = if last { dout } else { dout * config.heads() };
            let bias = store.add(&format!("gnn.{l}.bias"), Tensor::zeros(&[1, width]));
            layers.push(LayerIds { heads, bias });
        }
        Ok(Gnn { config, store, layers })
    }

    /// Runs every layer over `graph`. `x` must have one row per node.
    pub fn forward<'p>(&'p self, tape: &mut Tape<'p>, x: NodeId, graph: &MessageGraph) -> Result<GnnOutput> {
        let (rows, cols) = tape.value(x).dims2()?;
        if rows != graph.num_nodes || cols != self.config.in_dim {
            return Err(Error::Shape(format!(
                "GNN input {rows}x{cols}, expected {}x{}",
                graph.num_nodes, self.config.in_dim
            )));
        }
        let adj = match self.config.arch {
            GnnArch::Gcn => Some(Rc::new(graph.gcn_matrix())),
            GnnArch::Sage => Some(Rc::new(graph.neighbor_mean_matrix())),
            _ => None,
        };
        let mut h = x;
        let mut attention = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let (out, alpha) = self.layer_forward(tape, l, h, graph, adj.clone());
            h = out;
            attention.push(alpha);
        }
        let z = if self.config.residual { tape.add(x, h) } else { h };
        Ok(GnnOutput { z, attention })
    }

    /// One message-passing layer. Hidden layers concatenate heads and apply
    /// the activation; the last layer averages heads with no activation.
    pub fn layer_forward<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        l: usize,
        h: NodeId,
        graph: &MessageGraph,
        adj: Option<Rc<SparseMatrix>>,
    ) -> (NodeId, Vec<NodeId>) {
        let ids = &self.layers[l];
        let last = l + 1 == self.layers.len();
        let n = graph.num_nodes;
        let slope = self.config.negative_slope;
        let mut outs = Vec::with_capacity(ids.heads.len());
        let mut alphas = Vec::new();
        for head in &ids.heads {
            let out = match *head {
                HeadIds::Linear { w } => {
                    let w = tape.param(&self.store, w);
                    let adj = adj.clone().expect("adjacency for linear layers");
                    match self.config.arch {
                        GnnArch::Gcn => {
                            let hw = tape.matmul(h, w);
                            tape.spmm(adj, hw)
                        }
                        _ => {
                            let neigh = tape.spmm(adj, h);
                            let cat = tape.concat_cols(&[h, neigh]);
                            tape.matmul(cat, w)
                        }
                    }
                }
                HeadIds::Gat { w, att_dst, att_src } => {
                    let (w, ad, asrc) = (
                        tape.param(&self.store, w),
                        tape.param(&self.store, att_dst),
                        tape.param(&self.store, att_src),
                    );
                    let wh = tape.matmul(h, w);
                    let el = tape.matmul(wh, ad);
                    let er = tape.matmul(wh, asrc);
                    let ei = tape.gather_rows(el, graph.dst.clone());
                    let ej = tape.gather_rows(er, graph.src.clone());
                    let e = tape.add(ei, ej);
                    let e = tape.leaky_relu(e, slope);
                    let alpha = tape.segment_softmax(e, graph.dst.clone(), n);
                    alphas.push(alpha);
                    let msg = tape.gather_rows(wh, graph.src.clone());
                    let msg = tape.mul_col(msg, alpha);
                    tape.scatter_add_rows(msg, graph.dst.clone(), n)
                }
                HeadIds::Gatv2 { w_src, w_dst, att } => {
                    let (ws, wd, a) = (
                        tape.param(&self.store, w_src),
                        tape.param(&self.store, w_dst),
                        tape.param(&self.store, att),
                    );
                    let hs = tape.matmul(h, ws);
                    let hd = tape.matmul(h, wd);
                    let xi = tape.gather_rows(hd, graph.dst.clone());
                    let xj = tape.gather_rows(hs, graph.src.clone());
                    let z = tape.add(xi, xj);
                    let z = tape.leaky_relu(z, slope);
                    let e = tape.matmul(z, a);
                    let alpha = tape.segment_softmax(e, graph.dst.clone(), n);
                    alphas.push(alpha);
                    let msg = tape.mul_col(xj, alpha);
                    tape.scatter_add_rows(msg, graph.dst.clone(), n)
                }
            };
            outs.push(out);
        }
        let combined = if outs.len() == 1 {
            outs[0]
        } else if last {
            let mut acc = outs[0];
            for &o in &outs[1..] {
                acc = tape.add(acc, o);
            }
            tape.scale(acc, 1.0 / outs.len() as f64)
        } else {
            tape.concat_cols(&outs)
        };
        let bias = tape.param(&self.store, ids.bias);
        let out = tape.add_row(combined, bias);
        let out = if last { out } else { self.config.activation.apply(tape, out) };
        (out, alphas)
    }

    /// Forward pass without gradients.
    pub fn forward_tensor(&self, x: &Tensor, graph: &MessageGraph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let out = self.forward(&mut tape, xn, graph)?;
        Ok(tape.value(out.z).clone())
    }

    /// Attention coefficients per layer and head, aligned with the edge
    /// order of `graph`.
    pub fn attention(&self, x: &Tensor, graph: &MessageGraph) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let out = self.forward(&mut tape, xn, graph)?;
        Ok(out
            .attention
            .iter()
            .map(|heads| heads.iter().map(|&a| tape.value(a).data().to_vec()).collect())
            .collect())
    }
}
