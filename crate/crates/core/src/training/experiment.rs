//! The full two-stage run: bi-encoder, then graph encoder, then dev retrieval.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, QueryRecord, Split};
use crate::encoder::BiEncoder;
use crate::error::{invalid, Result};
use crate::eval::{evaluate_run, MetricReport, RankedList, DEFAULT_RUN_DEPTH};
use crate::graph::{init_node_features, FeatureSource, Gnn, GnnConfig, LegislativeGraph, MessageGraph};
use crate::lexical::{Bm25Index, TokenPipeline};

use super::dsr::qrels_of;
use super::{evaluate_dense, evaluate_enriched, train_dsr, train_lge, GraphInputs, RunConfig, TrainReport};

/// Dev runs and reports for the frozen bi-encoder, the graph-enriched model
/// and a random ranking.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dsr_training: TrainReport,
    pub lge_training: TrainReport,
    pub dsr_runs: Vec<RankedList>,
    pub dsr_report: MetricReport,
    pub gdsr_runs: Vec<RankedList>,
    pub gdsr_report: MetricReport,
    pub random_report: MetricReport,
}

pub fn bm25_index(corpus: &Corpus, pipeline: &TokenPipeline, cfg: &RunConfig) -> Result<Bm25Index> {
    Bm25Index::build(
        corpus.articles.iter().map(|a| (a.id.clone(), pipeline.tokenize(&a.text))),
        cfg.bm25,
    )
}

/// Uniformly shuffled rankings, one per query.
pub fn random_runs(corpus: &Corpus, queries: &[&QueryRecord], depth: usize, seed: u64) -> Vec<RankedList> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    queries
        .iter()
        .map(|q| {
            let mut ids: Vec<&str> = corpus.articles.iter().map(|a| a.id.as_str()).collect();
            ids.shuffle(&mut rng);
            let n = ids.len() as f64;
            RankedList::from_scores(&q.id, ids.iter().enumerate().map(|(i, id)| (id.to_string(), n - i as f64)), depth)
        })
        .collect()
}

/// GNN config adapted to the encoder width.
pub fn gnn_config_for(cfg: &RunConfig) -> GnnConfig {
    GnnConfig {
        in_dim: cfg.encoder.dim,
        out_dim: cfg.encoder.dim,
        ..cfg.gnn.clone()
    }
}

pub fn run_experiment(corpus: &Corpus, queries: &[QueryRecord], cfg: &RunConfig) -> Result<ExperimentOutcome> {
    let cfg = &RunConfig {
        gnn: gnn_config_for(cfg),
        ..cfg.clone()
    };
    cfg.validate()?;
    let train: Vec<&QueryRecord> = queries.iter().filter(|q| q.split == Split::Train).collect();
    let dev: Vec<&QueryRecord> = queries.iter().filter(|q| q.split == Split::Dev).collect();
    if dev.is_empty() {
        return Err(invalid("the experiment needs dev queries"));
    }
    let depth = corpus.len().min(DEFAULT_RUN_DEPTH);
    let pipeline = TokenPipeline::french();
    let bm25 = bm25_index(corpus, &pipeline, cfg)?;

    let mut encoder = BiEncoder::new(cfg.encoder.clone(), cfg.seed)?;
    let dsr_training = train_dsr(&mut encoder, corpus, &train, &dev, Some((&bm25, &pipeline)), &cfg.dsr, None)?;

    let article_ids: Vec<String> = corpus.articles.iter().map(|a| a.id.clone()).collect();
    let article_texts: Vec<&str> = corpus.articles.iter().map(|a| a.text.as_str()).collect();
    let articles = encoder.encode_articles(&article_texts);
    let dev_texts: Vec<&str> = dev.iter().map(|q| q.text.as_str()).collect();
    let dev_vectors = encoder.encode_queries(&dev_texts);
    let train_texts: Vec<&str> = train.iter().map(|q| q.text.as_str()).collect();
    let train_vectors = encoder.encode_queries(&train_texts);
    let (dsr_runs, dsr_report) = evaluate_dense(&article_ids, &articles, &dev, &dev_vectors, &cfg.dsr, depth)?;

    let graph = LegislativeGraph::from_corpus(corpus);
    let messages = MessageGraph::new(&graph, cfg.gnn.symmetrize, cfg.gnn.self_loops);
    let features = init_node_features(&graph, FeatureSource::Encoder(&encoder))?;
    let inputs = GraphInputs {
        graph: &graph,
        messages: &messages,
        features: &features,
    };
    let mut gnn = Gnn::new(cfg.gnn.clone(), cfg.seed)?;
    let lge_training = train_lge(
        &mut gnn,
        inputs,
        &train,
        &train_vectors,
        &dev,
        &dev_vectors,
        Some((&bm25, &pipeline)),
        &cfg.lge,
        None,
    )?;
    let (gdsr_runs, gdsr_report) = evaluate_enriched(&gnn, inputs, &dev, &dev_vectors, &cfg.lge, depth)?;

    let random = random_runs(corpus, &dev, depth, cfg.seed);
    let random_report = evaluate_run(&random, &qrels_of(&dev), &dsr_report.cutoffs)?;
    Ok(ExperimentOutcome {
        dsr_training,
        lge_training,
        dsr_runs,
        dsr_report,
        gdsr_runs,
        gdsr_report,
        random_report,
    })
}
