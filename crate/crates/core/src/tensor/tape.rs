//! Reverse-mode automatic differentiation over matrices.
//!
//! A [`Tape`] records every operation of a forward pass as a node. Nodes are
//! appended in evaluation order, so walking the tape backwards visits each
//! node after all of its consumers. Parameters are borrowed from a
//! [`ParamStore`] for the lifetime of the tape and registered at most once,
//! so their gradient accumulates over every use within one backward pass.

use std::borrow::Cow;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};

use super::{ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Row-compressed sparse matrix with fixed (non-trainable) weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    /// `offsets[i]..offsets[i+1]` indexes the entries of row `i`.
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl SparseMatrix {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        for i in 0..self.rows {
            for (j, w) in self.row(i) {
                t.data_mut()[i * self.cols + j] += w;
            }
        }
        t
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    LeakyRelu(NodeId, f64),
    Gelu(NodeId),
    Tanh(NodeId),
    SoftmaxRows(NodeId),
    LayerNormRows(NodeId, f64),
    L2NormalizeRows(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    GatherRows(NodeId, Rc<[usize]>),
    ScatterAddRows(NodeId, Rc<[usize]>),
    SegmentSoftmax(NodeId, Rc<[usize]>),
    MeanRows(NodeId),
    MaxRows(NodeId, Vec<usize>),
    Sum(NodeId),
    EmbeddingBagMean(NodeId, Rc<Vec<Vec<usize>>>),
    SpMM(Rc<SparseMatrix>, NodeId),
    NegEuclidean(NodeId, NodeId),
    ContrastiveNll {
        scores: NodeId,
        candidates: Rc<Vec<Vec<usize>>>,
        tau: f64,
    },
    Triplet {
        scores: NodeId,
        triples: Rc<Vec<(usize, usize, usize)>>,
        margin: f64,
    },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    params: HashMap<usize, NodeId>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients from one backward pass.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: HashMap<usize, NodeId>,
}

impl Gradients {
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node[id.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id.0).and_then(|n| self.node(*n))
    }

    /// Gradients aligned with the store's parameter order; `None` where a
    /// parameter was not used on the tape.
    pub fn for_store(mut self, store: &ParamStore) -> Vec<Option<Tensor>> {
        (0..store.len())
            .map(|i| {
                self.params
                    .get(&i)
                    .and_then(|n| self.by_node[n.0].take())
            })
            .collect()
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// A free input whose gradient is reported by [`Gradients::node`].
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Registers a store parameter (once per tape) and returns its node.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id.0) {
            return n;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(store.value(id)),
            op: Op::Leaf,
            needs_grad: true,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.params.insert(id.0, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let ng = self.ng(&[a]);
        self.push(v, Op::Transpose(a), ng)
    }

    fn zip(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise op on {:?} and {:?}", x.shape(), y.shape());
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        let v = Tensor::new(x.shape(), data).expect("same shape");
        let ng = self.ng(&[a, b]);
        self.push(v, op, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (x, r) = (self.value(a), self.value(row));
        let c = x.cols();
        assert_eq!(r.shape(), [1, c], "add_row: bias {:?} for {c} columns", r.shape());
        let mut v = x.clone();
        for i in 0..v.rows() {
            for (o, b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let ng = self.ng(&[a, row]);
        self.push(v, Op::AddRow(a, row), ng)
    }

    /// Scales row `i` of `a` by `col[i]` for a `[m, 1]` column.
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (x, c) = (self.value(a), self.value(col));
        assert_eq!(c.shape(), [x.rows(), 1], "mul_col: column {:?} for {} rows", c.shape(), x.rows());
        let mut v = x.clone();
        for i in 0..v.rows() {
            let s = c.data()[i];
            v.row_mut(i).iter_mut().for_each(|o| *o *= s);
        }
        let ng = self.ng(&[a, col]);
        self.push(v, Op::MulCol(a, col), ng)
    }

    fn map(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let x = self.value(a);
        let v = Tensor::new(x.shape(), x.data().iter().map(|p| f(*p)).collect()).expect("same shape");
        let ng = self.ng(&[a]);
        self.push(v, op, ng)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.map(a, |p| p * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        self.map(a, |p| p + s, Op::AddScalar(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.map(a, |p| if p > 0.0 { p } else { slope * p }, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.leaky_relu(a, 0.0)
    }

    /// GeLU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.map(a, |p| gelu_parts(p).0, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            softmax_inplace(v.row_mut(i));
        }
        let ng = self.ng(&[a]);
        self.push(v, Op::SoftmaxRows(a), ng)
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            let r = v.row_mut(i);
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            r.iter_mut().for_each(|x| *x = (*x - mean) * inv);
        }
        let ng = self.ng(&[a]);
        self.push(v, Op::LayerNormRows(a, eps), ng)
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            let r = v.row_mut(i);
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            r.iter_mut().for_each(|x| *x /= n);
        }
        let ng = self.ng(&[a]);
        self.push(v, Op::L2NormalizeRows(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let t = self.value(*p);
            assert_eq!(t.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                out[i * total + off..i * total + off + w].copy_from_slice(t.row(i));
            }
            off += w;
        }
        let ng = self.ng(parts);
        self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            assert_eq!(t.cols(), cols, "concat_rows column mismatch");
            out.extend_from_slice(t.data());
            rows += t.rows();
        }
        let ng = self.ng(parts);
        self.push(Tensor::matrix(rows, cols, out), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "slice_cols out of range");
        let mut out = Vec::with_capacity(x.rows() * len);
        for i in 0..x.rows() {
            out.extend_from_slice(&x.row(i)[start..start + len]);
        }
        let v = Tensor::matrix(x.rows(), len, out);
        let ng = self.ng(&[a]);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = self.value(a);
        assert!(start + len <= x.rows(), "slice_rows out of range");
        let c = x.cols();
        let v = Tensor::matrix(len, c, x.data()[start * c..(start + len) * c].to_vec());
        let ng = self.ng(&[a]);
        self.push(v, Op::SliceRows(a, start), ng)
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: impl Into<Rc<[usize]>>) -> NodeId {
        let idx: Rc<[usize]> = idx.into();
        let x = self.value(a);
        let c = x.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            out.extend_from_slice(x.row(i));
        }
        let v = Tensor::matrix(idx.len(), c, out);
        let ng = self.ng(&[a]);
        self.push(v, Op::GatherRows(a, idx), ng)
    }

    /// `out[idx[e]] += a[e]` into `out_rows` zero-initialized rows.
    pub fn scatter_add_rows(&mut self, a: NodeId, idx: impl Into<Rc<[usize]>>, out_rows: usize) -> NodeId {
        let idx: Rc<[usize]> = idx.into();
        let x = self.value(a);
        assert_eq!(x.rows(), idx.len(), "scatter_add_rows index length");
        let c = x.cols();
        let mut v = Tensor::zeros(&[out_rows, c]);
        for (e, &i) in idx.iter().enumerate() {
            for (o, s) in v.row_mut(i).iter_mut().zip(x.row(e)) {
                *o += s;
            }
        }
        let ng = self.ng(&[a]);
        self.push(v, Op::ScatterAddRows(a, idx), ng)
    }

    /// Softmax of a `[E, 1]` column within groups sharing the same segment id.
    pub fn segment_softmax(&mut self, a: NodeId, segments: impl Into<Rc<[usize]>>, num_segments: usize) -> NodeId {
        let seg: Rc<[usize]> = segments.into();
        let x = self.value(a);
        assert_eq!(x.shape(), [seg.len(), 1], "segment_softmax expects a column");
        let mut max = vec![f64::NEG_INFINITY; num_segments];
        for (e, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(x.data()[e]);
        }
        let mut out: Vec<f64> = seg.iter().enumerate().map(|(e, &s)| (x.data()[e] - max[s]).exp()).collect();
        let mut sum = vec![0.0; num_segments];
        for (e, &s) in seg.iter().enumerate() {
            sum[s] += out[e];
        }
        for (e, &s) in seg.iter().enumerate() {
            out[e] /= sum[s];
        }
        let v = Tensor::matrix(seg.len(), 1, out);
        let ng = self.ng(&[a]);
        self.push(v, Op::SegmentSoftmax(a, seg), ng)
    }

    /// Column means, `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let (m, n) = (x.rows(), x.cols());
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let ng = self.ng(&[a]);
        self.push(Tensor::row_vector(out), Op::MeanRows(a), ng)
    }

    /// Column maxima, `[m, n] -> [1, n]`; the first maximal row takes the gradient.
    pub fn max_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let n = x.cols();
        let mut arg = vec![0usize; n];
        let mut out = x.row(0).to_vec();
        for i in 1..x.rows() {
            for (j, v) in x.row(i).iter().enumerate() {
                if *v > out[j] {
                    out[j] = *v;
                    arg[j] = i;
                }
            }
        }
        let ng = self.ng(&[a]);
        self.push(Tensor::row_vector(out), Op::MaxRows(a, arg), ng)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Mean of `table` rows over each bag; empty bags give zero rows.
    pub fn embedding_bag_mean(&mut self, table: NodeId, bags: Rc<Vec<Vec<usize>>>) -> NodeId {
        let t = self.value(table);
        let d = t.cols();
        let mut out = vec![0.0; bags.len() * d];
        for (b, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                continue;
            }
            let o = &mut out[b * d..(b + 1) * d];
            for &i in bag {
                for (ov, tv) in o.iter_mut().zip(t.row(i)) {
                    *ov += tv;
                }
            }
            let inv = 1.0 / bag.len() as f64;
            o.iter_mut().for_each(|v| *v *= inv);
        }
        let v = Tensor::matrix(bags.len(), d, out);
        let ng = self.ng(&[table]);
        self.push(v, Op::EmbeddingBagMean(table, bags), ng)
    }

    /// Sparse-by-dense product with a fixed sparse matrix.
    pub fn spmm(&mut self, adj: Rc<SparseMatrix>, a: NodeId) -> NodeId {
        let x = self.value(a);
        assert_eq!(adj.cols, x.rows(), "spmm inner dimension");
        let c = x.cols();
        let mut v = Tensor::zeros(&[adj.rows, c]);
        for i in 0..adj.rows {
            for (j, w) in adj.row(i) {
                for (o, s) in v.row_mut(i).iter_mut().zip(x.row(j)) {
                    *o += w * s;
                }
            }
        }
        let ng = self.ng(&[a]);
        self.push(v, Op::SpMM(adj, a), ng)
    }

    /// `out[i][j] = -‖a_i − b_j‖`.
    pub fn neg_euclidean(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols(), y.cols(), "neg_euclidean dims");
        let (m, n) = (x.rows(), y.rows());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let d2: f64 = x.row(i).iter().zip(y.row(j)).map(|(p, q)| (p - q) * (p - q)).sum();
                out[i * n + j] = -d2.sqrt();
            }
        }
        let ng = self.ng(&[a, b]);
        self.push(Tensor::matrix(m, n, out), Op::NegEuclidean(a, b), ng)
    }

    /// Mean over rows of the temperature-scaled softmax NLL. Row `i` of
    /// `scores` is restricted to `candidates[i]`, whose first element is the
    /// positive column. Rows with an empty candidate list are skipped.
    pub fn contrastive_nll(&mut self, scores: NodeId, candidates: Rc<Vec<Vec<usize>>>, tau: f64) -> Result<NodeId> {
        let s = self.value(scores);
        if candidates.len() != s.rows() {
            return Err(Error::Shape(format!(
                "{} candidate lists for {} score rows",
                candidates.len(),
                s.rows()
            )));
        }
        if !s.is_finite() {
            return Err(Error::NonFinite("similarity scores".into()));
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, c) in candidates.iter().enumerate() {
            if c.is_empty() {
                continue;
            }
            let logits: Vec<f64> = c.iter().map(|&j| s.get(i, j) / tau).collect();
            total += nll_from_logits(&logits);
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let ng = self.ng(&[scores]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::ContrastiveNll {
                scores,
                candidates,
                tau,
            },
            ng,
        ))
    }

    /// Mean of `max(0, margin − s[r][p] + s[r][n])` over `(r, p, n)` triples.
    pub fn triplet(&mut self, scores: NodeId, triples: Rc<Vec<(usize, usize, usize)>>, margin: f64) -> NodeId {
        let s = self.value(scores);
        let total: f64 = triples
            .iter()
            .map(|&(r, p, n)| (margin - s.get(r, p) + s.get(r, n)).max(0.0))
            .sum();
        let loss = if triples.is_empty() { 0.0 } else { total / triples.len() as f64 };
        let ng = self.ng(&[scores]);
        self.push(
            Tensor::scalar(loss),
            Op::Triplet {
                scores,
                triples,
                margin,
            },
            ng,
        )
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!("backward from non-scalar of shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lv.shape(), vec![1.0]).expect("scalar"));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            by_node: grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &*node.value;
        let val = |id: NodeId| -> &Tensor { &self.nodes[id.0].value };
        let mut acc = |id: NodeId, t: Tensor| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(e) => e.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let like = |id: NodeId, data: Vec<f64>| Tensor::new(val(id).shape(), data).expect("same shape");
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    acc(*a, g.matmul_t(val(*b)));
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, val(*a).t_matmul(g));
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, like(*b, g.data().iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                acc(*a, like(*a, g.data().iter().zip(y.data()).map(|(p, q)| p * q).collect()));
                acc(*b, like(*b, g.data().iter().zip(x.data()).map(|(p, q)| p * q).collect()));
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone());
                let mut col = vec![0.0; g.cols()];
                for k in 0..g.rows() {
                    for (c, v) in col.iter_mut().zip(g.row(k)) {
                        *c += v;
                    }
                }
                acc(*r, Tensor::row_vector(col));
            }
            Op::MulCol(a, c) => {
                let (x, cv) = (val(*a), val(*c));
                let mut ga = g.clone();
                let mut gc = vec![0.0; x.rows()];
                for k in 0..x.rows() {
                    let s = cv.data()[k];
                    ga.row_mut(k).iter_mut().for_each(|v| *v *= s);
                    gc[k] = g.row(k).iter().zip(x.row(k)).map(|(p, q)| p * q).sum();
                }
                acc(*a, ga);
                acc(*c, Tensor::matrix(x.rows(), 1, gc));
            }
            Op::Scale(a, s) => acc(*a, like(*a, g.data().iter().map(|v| v * s).collect())),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::LeakyRelu(a, slope) => {
                let x = val(*a);
                acc(
                    *a,
                    like(
                        *a,
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(gv, xv)| if *xv > 0.0 { *gv } else { slope * gv })
                            .collect(),
                    ),
                )
            }
            Op::Gelu(a) => {
                let x = val(*a);
                acc(
                    *a,
                    like(*a, g.data().iter().zip(x.data()).map(|(gv, xv)| gv * gelu_parts(*xv).1).collect()),
                )
            }
            Op::Tanh(a) => acc(
                *a,
                like(*a, g.data().iter().zip(out.data()).map(|(gv, y)| gv * (1.0 - y * y)).collect()),
            ),
            Op::SoftmaxRows(a) => {
                let mut ga = g.clone();
                for k in 0..out.rows() {
                    let y = out.row(k);
                    let dot: f64 = y.iter().zip(g.row(k)).map(|(p, q)| p * q).sum();
                    for (j, v) in ga.row_mut(k).iter_mut().enumerate() {
                        *v = y[j] * (*v - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::LayerNormRows(a, eps) => {
                let x = val(*a);
                let mut ga = g.clone();
                for k in 0..x.rows() {
                    let r = x.row(k);
                    let n = r.len() as f64;
                    let mean = r.iter().sum::<f64>() / n;
                    let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let y = out.row(k);
                    let gr = g.row(k);
                    let gm = gr.iter().sum::<f64>() / n;
                    let gy = gr.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / n;
                    for (j, v) in ga.row_mut(k).iter_mut().enumerate() {
                        *v = inv * (gr[j] - gm - y[j] * gy);
                    }
                }
                acc(*a, ga);
            }
            Op::L2NormalizeRows(a) => {
                let x = val(*a);
                let mut ga = g.clone();
                for k in 0..x.rows() {
                    let n = x.row(k).iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    let y = out.row(k);
                    let dot: f64 = y.iter().zip(g.row(k)).map(|(p, q)| p * q).sum();
                    for (j, v) in ga.row_mut(k).iter_mut().enumerate() {
                        *v = (*v - y[j] * dot) / n;
                    }
                }
                acc(*a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = val(*p).cols();
                    let mut part = Vec::with_capacity(g.rows() * w);
                    for k in 0..g.rows() {
                        part.extend_from_slice(&g.row(k)[off..off + w]);
                    }
                    acc(*p, Tensor::matrix(g.rows(), w, part));
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut off = 0;
                for p in parts {
                    let r = val(*p).rows();
                    acc(*p, Tensor::matrix(r, c, g.data()[off * c..(off + r) * c].to_vec()));
                    off += r;
                }
            }
            Op::SliceCols(a, start) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.shape());
                let w = g.cols();
                for k in 0..g.rows() {
                    ga.row_mut(k)[*start..start + w].copy_from_slice(g.row(k));
                }
                acc(*a, ga);
            }
            Op::SliceRows(a, start) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.shape());
                let c = x.cols();
                ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*a, ga);
            }
            Op::GatherRows(a, idx) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.shape());
                for (e, &r) in idx.iter().enumerate() {
                    for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(e)) {
                        *o += v;
                    }
                }
                acc(*a, ga);
            }
            Op::ScatterAddRows(a, idx) => {
                let c = g.cols();
                let mut data = Vec::with_capacity(idx.len() * c);
                for &r in idx.iter() {
                    data.extend_from_slice(g.row(r));
                }
                acc(*a, Tensor::matrix(idx.len(), c, data));
            }
            Op::SegmentSoftmax(a, seg) => {
                let nseg = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; nseg];
                for (e, &s) in seg.iter().enumerate() {
                    dot[s] += out.data()[e] * g.data()[e];
                }
                let data = seg
                    .iter()
                    .enumerate()
                    .map(|(e, &s)| out.data()[e] * (g.data()[e] - dot[s]))
                    .collect();
                acc(*a, Tensor::matrix(seg.len(), 1, data));
            }
            Op::MeanRows(a) => {
                let x = val(*a);
                let m = x.rows() as f64;
                let mut ga = Tensor::zeros(x.shape());
                for k in 0..x.rows() {
                    for (o, v) in ga.row_mut(k).iter_mut().zip(g.data()) {
                        *o = v / m;
                    }
                }
                acc(*a, ga);
            }
            Op::MaxRows(a, arg) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.shape());
                let c = x.cols();
                for (j, &r) in arg.iter().enumerate() {
                    ga.data_mut()[r * c + j] += g.data()[j];
                }
                acc(*a, ga);
            }
            Op::Sum(a) => {
                let s = g.item();
                acc(*a, Tensor::full(val(*a).shape(), s));
            }
            Op::EmbeddingBagMean(t, bags) => {
                let table = val(*t);
                let mut gt = Tensor::zeros(table.shape());
                for (b, bag) in bags.iter().enumerate() {
                    if bag.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / bag.len() as f64;
                    for &r in bag {
                        for (o, v) in gt.row_mut(r).iter_mut().zip(g.row(b)) {
                            *o += v * inv;
                        }
                    }
                }
                acc(*t, gt);
            }
            Op::SpMM(adj, a) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.shape());
                for r in 0..adj.rows {
                    for (j, w) in adj.row(r) {
                        for (o, v) in ga.row_mut(j).iter_mut().zip(g.row(r)) {
                            *o += w * v;
                        }
                    }
                }
                acc(*a, ga);
            }
            Op::NegEuclidean(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(x.shape());
                let mut gb = Tensor::zeros(y.shape());
                for r in 0..x.rows() {
                    for c in 0..y.rows() {
                        let dist = -out.get(r, c);
                        if dist == 0.0 {
                            continue;
                        }
                        let w = g.get(r, c) / dist;
                        for k in 0..x.cols() {
                            let diff = x.get(r, k) - y.get(c, k);
                            ga.row_mut(r)[k] -= w * diff;
                            gb.row_mut(c)[k] += w * diff;
                        }
                    }
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::ContrastiveNll {
                scores,
                candidates,
                tau,
            } => {
                let s = val(*scores);
                let mut gs = Tensor::zeros(s.shape());
                let count = candidates.iter().filter(|c| !c.is_empty()).count().max(1) as f64;
                let scale = g.item() / count;
                for (r, c) in candidates.iter().enumerate() {
                    if c.is_empty() {
                        continue;
                    }
                    let mut p: Vec<f64> = c.iter().map(|&j| s.get(r, j) / tau).collect();
                    softmax_inplace(&mut p);
                    let cols = s.cols();
                    for (k, &j) in c.iter().enumerate() {
                        let target = if k == 0 { 1.0 } else { 0.0 };
                        gs.data_mut()[r * cols + j] += scale * (p[k] - target) / tau;
                    }
                }
                acc(*scores, gs);
            }
            Op::Triplet {
                scores,
                triples,
                margin,
            } => {
                let s = val(*scores);
                let mut gs = Tensor::zeros(s.shape());
                let scale = g.item() / triples.len().max(1) as f64;
                let cols = s.cols();
                for &(r, p, n) in triples.iter() {
                    if margin - s.get(r, p) + s.get(r, n) > 0.0 {
                        gs.data_mut()[r * cols + p] -= scale;
                        gs.data_mut()[r * cols + n] += scale;
                    }
                }
                acc(*scores, gs);
            }
        }
    }
}

pub(crate) fn softmax_inplace(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    x.iter_mut().for_each(|v| *v /= sum);
}

/// `-log softmax(logits)[0]`, max-shifted. Terms are summed in ascending
/// order so the result does not depend on the order of `logits[1..]`.
/// `logsumexp(logits) − logits[0]` as `(max − logits[0]) + ln_1p(rest)`, where
/// `rest` sums the shifted exponentials of every entry but one maximum. Keeps
/// full relative precision when the positive dominates.
pub(crate) fn nll_from_logits(logits: &[f64]) -> f64 {
    let (arg, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    let mut rest: Vec<f64> = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, v)| (v - max).exp())
        .collect();
    rest.sort_by(f64::total_cmp);
    (max - logits[0]) + rest.iter().sum::<f64>().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]));
        let mut tape = Tape::new();
        let wn = tape.param(&store, w);
        let l = tape.sum(wn);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.param(w).unwrap(), &Tensor::full(&[2, 3], 1.0));
    }

    #[test]
    fn squared_norm_of_wx() {
        // d/dW ||Wx||^2 = 2 (Wx) x^T
        let mut store = ParamStore::new();
        let wv = Tensor::matrix(2, 2, vec![1.0, 2.0, -1.0, 0.5]);
        let w = store.add("w", wv.clone());
        let x = Tensor::matrix(2, 1, vec![3.0, -1.0]);
        let mut tape = Tape::new();
        let wn = tape.param(&store, w);
        let xn = tape.constant(x.clone());
        let y = tape.matmul(wn, xn);
        let sq = tape.mul(y, y);
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        let wx = wv.matmul(&x);
        let expected = wx.matmul(&x.transpose());
        let got = g.param(w).unwrap();
        for (a, b) in got.data().iter().zip(expected.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn param_registered_once_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let a = tape.param(&store, w);
        let b = tape.param(&store, w);
        assert_eq!(a, b);
        let s = tape.add(a, b);
        let l = tape.sum(s);
        assert_eq!(tape.backward(l).unwrap().param(w).unwrap().item(), 2.0);
    }

    #[test]
    fn backward_needs_scalar() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[2, 2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -50.0, 0.0, 700.0]));
        let y = tape.softmax_rows(x);
        let shifted = tape.add_scalar(x, 123.0);
        let y2 = tape.softmax_rows(shifted);
        for r in 0..2 {
            let s: f64 = tape.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            for (a, b) in tape.value(y).row(r).iter().zip(tape.value(y2).row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn segment_softmax_normalizes_each_segment() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(5, 1, vec![0.1, 2.0, -1.0, 3.0, 0.0]));
        let y = tape.segment_softmax(x, vec![0, 1, 0, 1, 2], 3);
        let v = tape.value(y).data().to_vec();
        assert!((v[0] + v[2] - 1.0).abs() < 1e-12);
        assert!((v[1] + v[3] - 1.0).abs() < 1e-12);
        assert_eq!(v[4], 1.0);
    }
}
