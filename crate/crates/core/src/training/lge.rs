//! Training the graph encoder on frozen article and query embeddings.

use std::collections::HashMap;
use std::io::Write;
use std::rc::Rc;

use serde_json::json;

use crate::corpus::QueryRecord;
use crate::encoder::score_matrix;
use crate::error::{invalid, Error, Result};
use crate::eval::{MetricReport, RankedList};
use crate::graph::{extract_l_hop_subgraph, Gnn, LegislativeGraph, MessageGraph, NodeFeatures, NodeKind};
use crate::lexical::{Bm25Index, TokenPipeline};
use crate::tensor::{Tape, Tensor};

use super::batches::{build_batches, make_instances, TrainingInstance};
use super::dsr::{
    batch_columns, batch_loss, evaluate_dense, log_line, metric_value, relevance_map, restore, snapshot, TrainReport,
};
use super::TrainRunConfig;

/// Graph, message view and frozen node features used by the graph encoder.
#[derive(Clone, Copy)]
pub struct GraphInputs<'a> {
    pub graph: &'a LegislativeGraph,
    pub messages: &'a MessageGraph,
    pub features: &'a NodeFeatures,
}

impl GraphInputs<'_> {
    fn article_node(&self, id: &str) -> Result<usize> {
        self.graph
            .node_by_source(id)
            .filter(|&v| self.graph.node(v).kind == NodeKind::Article)
            .ok_or_else(|| invalid(format!("article {id:?} is not in the graph")))
    }

    /// Enriched embeddings of every article node, in node order.
    pub fn enrich(&self, gnn: &Gnn) -> Result<(Vec<String>, Tensor)> {
        let z = gnn.forward_tensor(&self.features.matrix, self.messages)?;
        let nodes = self.graph.article_nodes();
        let ids = nodes.iter().map(|&v| self.graph.node(v).source_id.clone()).collect();
        let d = z.cols();
        let data = nodes.iter().flat_map(|&v| z.row(v).iter().copied()).collect();
        Ok((ids, Tensor::matrix(nodes.len(), d, data)))
    }
}

/// Frozen query vectors by query id.
pub type QueryVectors = HashMap<String, Vec<f64>>;

pub fn query_vectors(queries: &[&QueryRecord], matrix: &Tensor) -> QueryVectors {
    queries.iter().enumerate().map(|(i, q)| (q.id.clone(), matrix.row(i).to_vec())).collect()
}

/// Loss of one batch, and its gradients for the GNN parameters. With
/// `subgraph`, the forward pass only covers the batch's L-hop neighborhood.
pub fn lge_batch_loss(
    gnn: &Gnn,
    inputs: GraphInputs<'_>,
    batch: &[TrainingInstance],
    queries: &QueryVectors,
    cfg: &TrainRunConfig,
    subgraph: bool,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let cols = batch_columns(batch);
    let nodes: Vec<usize> = cols.articles.iter().map(|id| inputs.article_node(id)).collect::<Result<_>>()?;
    let d = gnn.config.out_dim;
    let mut qdata = Vec::with_capacity(batch.len() * d);
    for inst in batch {
        let v = queries
            .get(&inst.query_id)
            .ok_or_else(|| invalid(format!("no vector for query {:?}", inst.query_id)))?;
        qdata.extend_from_slice(v);
    }
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::matrix(batch.len(), d, qdata));
    let rows = if subgraph {
        let sub = extract_l_hop_subgraph(inputs.graph, inputs.messages, &nodes, gnn.config.layers)?;
        let x = inputs.features.matrix.clone();
        let xs = Tensor::matrix(
            sub.nodes.len(),
            x.cols(),
            sub.nodes.iter().flat_map(|&v| x.row(v).iter().copied()).collect(),
        );
        let xn = tape.constant(xs);
        let out = gnn.forward(&mut tape, xn, &sub.messages)?;
        tape.gather_rows(out.z, Rc::<[usize]>::from(sub.batch_local.as_slice()))
    } else {
        let xn = tape.constant(inputs.features.matrix.clone());
        let out = gnn.forward(&mut tape, xn, inputs.messages)?;
        tape.gather_rows(out.z, Rc::<[usize]>::from(nodes.as_slice()))
    };
    let s = score_matrix(&mut tape, q, rows, cfg.loss.similarity);
    let l = batch_loss(&mut tape, s, cols.candidates, &cfg.loss)?;
    let value = tape.value(l).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("graph encoder loss".into()));
    }
    Ok((value, tape.backward(l)?.for_store(&gnn.store)))
}

/// Dense retrieval over enriched article embeddings.
pub fn evaluate_enriched(
    gnn: &Gnn,
    inputs: GraphInputs<'_>,
    queries: &[&QueryRecord],
    query_matrix: &Tensor,
    cfg: &TrainRunConfig,
    depth: usize,
) -> Result<(Vec<RankedList>, MetricReport)> {
    let (ids, z) = inputs.enrich(gnn)?;
    evaluate_dense(&ids, &z, queries, query_matrix, cfg, depth)
}

/// Trains only the GNN parameters. Query vectors and node features stay
/// frozen; each step runs on the L-hop subgraph of the batch articles.
#[allow(clippy::too_many_arguments)]
pub fn train_lge(
    gnn: &mut Gnn,
    inputs: GraphInputs<'_>,
    train: &[&QueryRecord],
    train_vectors: &Tensor,
    dev: &[&QueryRecord],
    dev_vectors: &Tensor,
    bm25: Option<(&Bm25Index, &TokenPipeline)>,
    cfg: &TrainRunConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(invalid("training split is empty"));
    }
    if train_vectors.rows() != train.len() || dev_vectors.rows() != dev.len() {
        return Err(Error::Shape("query vector count differs from query count".into()));
    }
    let selection = cfg.selection()?;
    let qv = query_vectors(train, train_vectors);
    let empty_pipeline = TokenPipeline::default();
    let (index, pipeline) = match bm25 {
        Some((ix, p)) => (Some(ix), p),
        None => (None, &empty_pipeline),
    };
    let instances = make_instances(train, index, pipeline, cfg.bm25_negatives);
    let relevant = relevance_map(train);
    let steps_per_epoch = instances.len().div_ceil(cfg.batch_size);
    let schedule = cfg.schedule(steps_per_epoch * cfg.max_epochs);
    let optimizer = cfg.optimizer();
    let depth = inputs.graph.article_nodes().len().min(crate::eval::DEFAULT_RUN_DEPTH);

    let mut report = TrainReport::default();
    let mut best = (f64::NEG_INFINITY, 0usize, snapshot(&gnn.store));
    let mut consider = |epoch: usize, gnn: &Gnn, report: &mut TrainReport| -> Result<Option<serde_json::Value>> {
        if dev.is_empty() {
            best = (0.0, epoch, snapshot(&gnn.store));
            return Ok(None);
        }
        let (_, r) = evaluate_enriched(gnn, inputs, dev, dev_vectors, cfg, depth)?;
        let v = metric_value(&r, selection)?;
        if v >= best.0 {
            best = (v, epoch, snapshot(&gnn.store));
        }
        let row: std::collections::BTreeMap<String, f64> = r.macro_values().into_iter().collect();
        report.dev.push(row.clone());
        Ok(Some(json!(row)))
    };
    let row = consider(0, gnn, &mut report)?;
    log_line(&mut log, json!({"epoch": 0, "dev": row}))?;

    let mut step = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let batches = build_batches(&instances, &relevant, cfg.batch_size, cfg.seed.wrapping_add(epoch as u64), cfg.in_batch_negatives);
        let mut epoch_loss = 0.0;
        for batch in &batches {
            let (loss, grads) = lge_batch_loss(gnn, inputs, batch, &qv, cfg, true)?;
            let lr = schedule.lr_at(step);
            gnn.store
                .adamw_step(&grads, &optimizer, lr)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, step {step}: {e}")))?;
            log_line(&mut log, json!({"step": step, "epoch": epoch, "loss": loss, "lr": lr}))?;
            report.step_losses.push(loss);
            report.step_lrs.push(lr);
            epoch_loss += loss;
            step += 1;
        }
        report.epoch_losses.push(epoch_loss / batches.len().max(1) as f64);
        let row = consider(epoch, gnn, &mut report)?;
        log_line(&mut log, json!({"epoch": epoch, "train_loss": report.epoch_losses.last(), "dev": row}))?;
    }
    let (value, epoch, values) = best;
    restore(&mut gnn.store, values);
    report.best_epoch = epoch;
    report.best_value = value;
    Ok(report)
}
