//! Contrastive training of the bi-encoder.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::rc::Rc;

use serde_json::json;

use crate::corpus::{Corpus, QueryRecord};
use crate::encoder::{score_matrix, BiEncoder};
use crate::error::{invalid, Error, Result};
use crate::eval::{evaluate_run, DenseIndex, MetricReport, Qrels, RankMetric, RankedList};
use crate::lexical::{Bm25Index, TokenPipeline};
use crate::tensor::{NodeId, ParamStore, Tape, Tensor};

use super::batches::{build_batches, make_instances, TrainingInstance};
use super::{LossConfig, LossKind, TrainRunConfig};

/// Loss curve and per-epoch dev metrics of a training run. Epoch 0 is the
/// model before any update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub step_losses: Vec<f64>,
    pub step_lrs: Vec<f64>,
    /// Mean training loss per epoch, starting with epoch 1.
    pub epoch_losses: Vec<f64>,
    pub dev: Vec<BTreeMap<String, f64>>,
    pub best_epoch: usize,
    pub best_value: f64,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.epoch_losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Value of `metric` in a report; recall cutoffs must have been evaluated.
pub fn metric_value(report: &MetricReport, metric: RankMetric) -> Result<f64> {
    match metric {
        RankMetric::Recall(k) => report
            .recall(k)
            .ok_or_else(|| invalid(format!("R@{k} was not evaluated"))),
        RankMetric::RPrecision => Ok(report.mrp),
        RankMetric::AveragePrecision => Ok(report.map),
    }
}

pub fn qrels_of(queries: &[&QueryRecord]) -> Qrels {
    queries.iter().map(|q| (q.id.clone(), q.relevant_ids.clone())).collect()
}

/// Exact dense retrieval of `queries` against `articles`, then evaluation.
pub fn evaluate_dense(
    article_ids: &[String],
    articles: &Tensor,
    queries: &[&QueryRecord],
    query_vectors: &Tensor,
    cfg: &TrainRunConfig,
    depth: usize,
) -> Result<(Vec<RankedList>, MetricReport)> {
    let index = DenseIndex::build(article_ids.to_vec(), articles, cfg.loss.similarity)?;
    let qv: Vec<(String, Vec<f64>)> = queries
        .iter()
        .enumerate()
        .map(|(i, q)| (q.id.clone(), query_vectors.row(i).to_vec()))
        .collect();
    let runs = index.retrieve_batch(&qv, depth)?;
    let mut cutoffs = cfg.dev_cutoffs.clone();
    if let RankMetric::Recall(k) = cfg.selection()? {
        cutoffs.push(k);
    }
    let report = evaluate_run(&runs, &qrels_of(queries), &cutoffs)?;
    Ok((runs, report))
}

fn report_row(report: &MetricReport) -> BTreeMap<String, f64> {
    report.macro_values().into_iter().collect()
}

pub(crate) struct BatchColumns {
    pub articles: Vec<String>,
    pub candidates: Vec<Vec<usize>>,
}

/// Unique article columns of a batch (first appearance order) and, per
/// instance, the positive column followed by its negative columns.
pub(crate) fn batch_columns(batch: &[TrainingInstance]) -> BatchColumns {
    let mut articles: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut col = |id: &str, articles: &mut Vec<String>| -> usize {
        *index.entry(id.to_string()).or_insert_with(|| {
            articles.push(id.to_string());
            articles.len() - 1
        })
    };
    let candidates = batch
        .iter()
        .map(|inst| {
            let mut c = vec![col(&inst.positive, &mut articles)];
            c.extend(inst.negatives.iter().map(|n| col(n, &mut articles)));
            c
        })
        .collect();
    BatchColumns { articles, candidates }
}

/// The configured loss over a `[queries, articles]` score node.
pub(crate) fn batch_loss(tape: &mut Tape<'_>, scores: NodeId, candidates: Vec<Vec<usize>>, loss: &LossConfig) -> Result<NodeId> {
    match loss.kind {
        LossKind::Nll => tape.contrastive_nll(scores, Rc::new(candidates), loss.temperature),
        LossKind::Triplet => {
            let triples = candidates
                .iter()
                .enumerate()
                .flat_map(|(r, c)| c[1..].iter().map(move |&n| (r, c[0], n)))
                .collect();
            Ok(tape.triplet(scores, Rc::new(triples), loss.margin))
        }
    }
}

pub(crate) fn log_line(log: &mut Option<&mut dyn Write>, value: serde_json::Value) -> Result<()> {
    if let Some(w) = log.as_mut() {
        writeln!(w, "{value}")?;
    }
    Ok(())
}

pub(crate) fn snapshot(store: &ParamStore) -> Vec<Tensor> {
    store.ids().map(|id| store.value(id).clone()).collect()
}

pub(crate) fn restore(store: &mut ParamStore, values: Vec<Tensor>) {
    let ids: Vec<_> = store.ids().collect();
    for (id, v) in ids.into_iter().zip(values) {
        *store.value_mut(id) = v;
    }
}

pub(crate) fn relevance_map(queries: &[&QueryRecord]) -> BTreeMap<String, BTreeSet<String>> {
    qrels_of(queries)
}

/// Trains query and article encoders jointly with in-batch and static BM25
/// negatives. After every epoch the dev split is evaluated; the parameters
/// of the best epoch (later epochs win ties) are restored before returning.
#[allow(clippy::too_many_arguments)]
pub fn train_dsr(
    encoder: &mut BiEncoder,
    corpus: &Corpus,
    train: &[&QueryRecord],
    dev: &[&QueryRecord],
    bm25: Option<(&Bm25Index, &TokenPipeline)>,
    cfg: &TrainRunConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(invalid("training split is empty"));
    }
    if cfg.loss.similarity != encoder.config.similarity {
        return Err(invalid("loss similarity differs from the encoder's similarity"));
    }
    let selection = cfg.selection()?;
    let article_tokens: HashMap<&str, Vec<String>> =
        corpus.articles.iter().map(|a| (a.id.as_str(), encoder.tokenize(&a.text))).collect();
    let query_tokens: HashMap<&str, Vec<String>> =
        train.iter().map(|q| (q.id.as_str(), encoder.tokenize(&q.text))).collect();
    let article_ids: Vec<String> = corpus.articles.iter().map(|a| a.id.clone()).collect();
    let article_texts: Vec<&str> = corpus.articles.iter().map(|a| a.text.as_str()).collect();
    let dev_texts: Vec<&str> = dev.iter().map(|q| q.text.as_str()).collect();
    let depth = corpus.len().min(crate::eval::DEFAULT_RUN_DEPTH);

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

    let mut report = TrainReport::default();
    let evaluate = |enc: &BiEncoder| -> Result<Option<MetricReport>> {
        if dev.is_empty() {
            return Ok(None);
        }
        let a = enc.encode_articles(&article_texts);
        let q = enc.encode_queries(&dev_texts);
        Ok(Some(evaluate_dense(&article_ids, &a, dev, &q, cfg, depth)?.1))
    };
    let mut best = (f64::NEG_INFINITY, 0usize, snapshot(&encoder.store));
    let mut consider = |epoch: usize, dev_report: Option<MetricReport>, enc: &BiEncoder, report: &mut TrainReport| -> Result<Option<BTreeMap<String, f64>>> {
        let Some(r) = dev_report else {
            best = (0.0, epoch, snapshot(&enc.store));
            return Ok(None);
        };
        let v = metric_value(&r, selection)?;
        if v >= best.0 {
            best = (v, epoch, snapshot(&enc.store));
        }
        let row = report_row(&r);
        report.dev.push(row.clone());
        Ok(Some(row))
    };
    let initial = evaluate(encoder)?;
    let row = consider(0, initial, encoder, &mut report)?;
    log_line(&mut log, json!({"epoch": 0, "dev": row}))?;

    let mut step = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let batches = build_batches(&instances, &relevant, cfg.batch_size, cfg.seed.wrapping_add(epoch as u64), cfg.in_batch_negatives);
        let mut epoch_loss = 0.0;
        for batch in &batches {
            let cols = batch_columns(batch);
            let (loss, grads) = {
                let mut tape = Tape::new();
                let qt: Vec<Vec<String>> = batch.iter().map(|i| query_tokens[i.query_id.as_str()].clone()).collect();
                let at: Vec<Vec<String>> = cols
                    .articles
                    .iter()
                    .map(|id| {
                        article_tokens
                            .get(id.as_str())
                            .cloned()
                            .ok_or_else(|| invalid(format!("unknown article {id:?} in batch")))
                    })
                    .collect::<Result<_>>()?;
                let q = encoder.query_forward(&mut tape, &qt);
                let a = encoder.article_forward(&mut tape, &at);
                let s = score_matrix(&mut tape, q, a, cfg.loss.similarity);
                let l = batch_loss(&mut tape, s, cols.candidates, &cfg.loss)?;
                let value = tape.value(l).item();
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at epoch {epoch}, step {step}")));
                }
                (value, tape.backward(l)?.for_store(&encoder.store))
            };
            let lr = schedule.lr_at(step);
            encoder
                .store
                .adamw_step(&grads, &optimizer, lr)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, step {step}: {e}")))?;
            log_line(&mut log, json!({"step": step, "epoch": epoch, "loss": loss, "lr": lr}))?;
            report.step_losses.push(loss);
            report.step_lrs.push(lr);
            epoch_loss += loss;
            step += 1;
        }
        report.epoch_losses.push(epoch_loss / batches.len().max(1) as f64);
        let dev_report = evaluate(encoder)?;
        let row = consider(epoch, dev_report, encoder, &mut report)?;
        log_line(&mut log, json!({"epoch": epoch, "train_loss": report.epoch_losses.last(), "dev": row}))?;
    }
    let (value, epoch, values) = best;
    restore(&mut encoder.store, values);
    report.best_epoch = epoch;
    report.best_value = value;
    Ok(report)
}
