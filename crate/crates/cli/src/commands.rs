use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gdsr_core::corpus::{consecutive_articles, load_corpus, load_queries, write_corpus, write_queries, Corpus, QueryRecord, Split};
use gdsr_core::encoder::{import_embeddings, BiEncoder, EmbeddingMatrix};
use gdsr_core::eval::{compare_systems, evaluate_run, read_qrels, read_run, write_qrels, write_run, DenseIndex, MetricReport, RankMetric};
use gdsr_core::fixture::{statute_fixture, FixtureConfig};
use gdsr_core::graph::{init_node_features, FeatureSource, Gnn, LegislativeGraph, MessageGraph, NodeFeatures};
use gdsr_core::lexical::{neighbor_similarity_matrix, tune_bm25_grid, Bm25Index, Bm25Params, DevQuery, TokenPipeline};
use gdsr_core::tensor::{load_checkpoint_into, save_checkpoint, Tensor};
use gdsr_core::training::{bm25_index, gnn_config_for, qrels_of, train_dsr, train_lge, GraphInputs, RunConfig, TrainReport, TrainRunConfig};
use serde_json::json;

use crate::output::Staging;
use crate::{
    Bm25Command, Bm25IndexArgs, Bm25SearchArgs, Bm25TuneArgs, Command, CompareArgs, ConfigArgs, EmbedArgs, EvaluateArgs,
    GenFixtureArgs, IngestArgs, LexicalFlags, NeighborArgs, OutArgs, RetrieveArgs, TrainDsrArgs, TrainFlags, TrainLgeArgs,
    Validation,
};

const CONFIG_FILE: &str = "config.json";
const ENCODER_FILE: &str = "encoder.ckpt";
const GNN_FILE: &str = "gnn.ckpt";
const FEATURES_FILE: &str = "features.json";
const ARTICLE_IDS: &str = "articles.ids.txt";
const ARTICLE_MATRIX: &str = "articles.emb";

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(&a),
        Command::AnalyzeNeighbors(a) => analyze_neighbors(&a),
        Command::Bm25(Bm25Command::Index(a)) => bm25_index_cmd(&a),
        Command::Bm25(Bm25Command::Search(a)) => bm25_search(&a),
        Command::Bm25(Bm25Command::Tune(a)) => bm25_tune(&a),
        Command::Embed(a) => embed(&a),
        Command::TrainDsr(a) => train_dsr_cmd(&a),
        Command::TrainLge(a) => train_lge_cmd(&a),
        Command::Retrieve(a) => retrieve(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Compare(a) => compare(&a),
        Command::GenFixture(a) => gen_fixture(&a),
    }
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Validation(msg.into()).into()
}

fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(invalid(format!("missing input {}", path.display())))
    }
}

fn stage(out: &OutArgs) -> Result<Staging> {
    Staging::create(&out.out, out.force)
}

/// Writes `summary.json`, moves the output into place and echoes the summary.
fn finish(staging: Staging, summary: serde_json::Value) -> Result<()> {
    staging.write_json("summary.json", &summary)?;
    let dest = staging.commit()?;
    println!("{}", serde_json::to_string_pretty(&json!({"output": dest, "summary": summary}))?);
    Ok(())
}

fn open_corpus(path: &Path) -> Result<Corpus> {
    Ok(load_corpus(require(path)?)?)
}

fn open_queries(path: &Path, corpus: &Corpus) -> Result<Vec<QueryRecord>> {
    Ok(load_queries(require(path)?, corpus)?.0)
}

fn of_split(queries: &[QueryRecord], split: Split) -> Vec<&QueryRecord> {
    queries.iter().filter(|q| q.split == split).collect()
}

fn pipeline(flags: &LexicalFlags) -> Result<TokenPipeline> {
    let mut p = TokenPipeline::french();
    if let Some(path) = &flags.stopwords {
        p = p.with_stopword_file(require(path)?)?;
    }
    p.stem = flags.stem;
    Ok(p)
}

/// Defaults, then the config file, then GDSR_SEED, then `--seed`.
fn resolve_config(args: &ConfigArgs, fallback: Option<&Path>) -> Result<(RunConfig, Option<PathBuf>)> {
    let path = args.config.clone().or_else(|| fallback.map(Path::to_path_buf));
    let patch = match &path {
        Some(p) => {
            let text = std::fs::read_to_string(require(p)?)?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => json!({}),
    };
    let mut cfg = RunConfig::from_overrides(patch).map_err(|e| invalid(format!("run config: {e}")))?;
    if let Ok(s) = std::env::var("GDSR_SEED") {
        let seed = s.trim().parse().map_err(|_| invalid(format!("GDSR_SEED={s:?} is not an unsigned integer")))?;
        cfg = cfg.with_seed(seed);
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok((cfg, path))
}

fn apply_train_flags(cfg: &mut TrainRunConfig, flags: &TrainFlags) {
    if let Some(v) = flags.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = flags.lr {
        cfg.peak_learning_rate = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.weight_decay {
        cfg.weight_decay = v;
    }
}

fn training_summary(report: &TrainReport, cfg: &TrainRunConfig) -> serde_json::Value {
    json!({
        "epochs": cfg.max_epochs,
        "steps": report.step_losses.len(),
        "initial_loss": report.initial_loss(),
        "final_loss": report.final_loss(),
        "selection_metric": cfg.selection_metric,
        "best_epoch": report.best_epoch,
        "best_value": report.best_value,
        "dev": report.dev.get(report.best_epoch),
    })
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let corpus = open_corpus(&a.corpus)?;
    let queries = a.queries.as_deref().map(|q| open_queries(q, &corpus)).transpose()?;
    let staging = stage(&a.out)?;
    let mut inputs = vec![("corpus", a.corpus.as_path())];
    if let Some(q) = &a.queries {
        inputs.push(("queries", q.as_path()));
    }
    staging.manifest("ingest", None, None, &inputs, a)?;

    let graph = LegislativeGraph::from_corpus(&corpus);
    staging.write("graph.tsv", graph.to_tsv())?;
    let mut splits = BTreeMap::new();
    if let Some(queries) = &queries {
        for split in [Split::Train, Split::Dev, Split::Test] {
            let qs = of_split(queries, split);
            splits.insert(split.as_str(), qs.len());
            if !qs.is_empty() {
                let mut buf = Vec::new();
                write_qrels(&qrels_of(&qs), &mut buf)?;
                staging.write(&format!("qrels.{}.txt", split.as_str()), buf)?;
            }
        }
    }
    let report = json!({
        "articles": corpus.len(),
        "codes": corpus.counts_per_code(),
        "tree": {
            "nodes": corpus.tree.len(),
            "edges": corpus.tree.edge_count(),
            "roots": corpus.tree.roots.len(),
        },
        "splits": splits,
    });
    staging.write_json("report.json", &report)?;
    finish(staging, report)
}

fn analyze_neighbors(a: &NeighborArgs) -> Result<()> {
    let corpus = open_corpus(&a.corpus)?;
    let code = match &a.code {
        Some(c) => c.clone(),
        None => {
            let root = *corpus.tree.roots.first().ok_or_else(|| invalid("empty corpus"))?;
            corpus.tree.root_heading(root).to_string()
        }
    };
    let articles = consecutive_articles(&corpus, &code, a.start, a.count)?;
    let pipeline = pipeline(&a.lexical)?;
    let staging = stage(&a.out)?;
    staging.manifest("analyze-neighbors", None, None, &[("corpus", &a.corpus)], a)?;

    let pairs: Vec<(&str, &str)> = articles.iter().map(|r| (r.id.as_str(), r.text.as_str())).collect();
    let m = neighbor_similarity_matrix(&pairs, &pipeline)?;
    staging.write("similarity.csv", m.to_csv())?;
    let n = m.ids.len();
    let mut curve = String::from("offset\tmean_similarity\n");
    let mut consecutive = 0.0;
    for d in 1..n.min(21) {
        let mean = (0..n - d).map(|i| m.values[i][i + d]).sum::<f64>() / (n - d) as f64;
        if d == 1 {
            consecutive = mean;
        }
        curve.push_str(&format!("{d}\t{mean:.6}\n"));
    }
    staging.write("offset_curve.tsv", curve)?;
    let off_diagonal = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)));
    let all_pairs = off_diagonal.map(|(i, j)| m.values[i][j]).sum::<f64>() / (n * (n - 1)) as f64;
    finish(
        staging,
        json!({
            "code": code,
            "start": a.start,
            "count": n,
            "mean_consecutive": consecutive,
            "mean_all_pairs": all_pairs,
            "empty_articles": m.empty,
        }),
    )
}

fn bm25_index_cmd(a: &Bm25IndexArgs) -> Result<()> {
    let corpus = open_corpus(&a.corpus)?;
    let params = Bm25Params::new(a.k1, a.b).map_err(|e| invalid(e.to_string()))?;
    let pipeline = pipeline(&a.lexical)?;
    let staging = stage(&a.out)?;
    staging.manifest("bm25 index", None, None, &[("corpus", &a.corpus)], a)?;
    let index = Bm25Index::build(corpus.articles.iter().map(|r| (r.id.clone(), pipeline.tokenize(&r.text))), params)?;
    let mut buf = Vec::new();
    index.save(&mut buf)?;
    staging.write("index.json", buf)?;
    finish(
        staging,
        json!({"documents": index.num_docs(), "avgdl": index.avgdl(), "k1": params.k1, "b": params.b}),
    )
}

fn bm25_search(a: &Bm25SearchArgs) -> Result<()> {
    let corpus = open_corpus(&a.corpus)?;
    let queries = open_queries(&a.queries, &corpus)?;
    let index = Bm25Index::load(BufReader::new(File::open(require(&a.index)?)?))?;
    if a.k == 0 {
        return Err(invalid("--k must be positive"));
    }
    let pipeline = pipeline(&a.lexical)?;
    let staging = stage(&a.out)?;
    staging.manifest(
        "bm25 search",
        None,
        None,
        &[("index", &a.index), ("corpus", &a.corpus), ("queries", &a.queries)],
        a,
    )?;
    let selected = of_split(&queries, a.split);
    let runs: Vec<_> = selected.iter().map(|q| index.topk(&q.id, &pipeline.tokenize(&q.text), a.k)).collect();
    let mut buf = Vec::new();
    write_run(&runs, &a.tag, &mut buf)?;
    staging.write("run.trec", buf)?;
    finish(staging, json!({"queries": runs.len(), "depth": a.k, "split": a.split.as_str()}))
}

fn bm25_tune(a: &Bm25TuneArgs) -> Result<()> {
    let corpus = open_corpus(&a.corpus)?;
    let queries = open_queries(&a.queries, &corpus)?;
    let metric: RankMetric = a.metric.parse().map_err(|e: gdsr_core::Error| invalid(e.to_string()))?;
    let pipeline = pipeline(&a.lexical)?;
    let dev: Vec<DevQuery> = of_split(&queries, a.split)
        .into_iter()
        .map(|q| DevQuery {
            id: q.id.clone(),
            tokens: pipeline.tokenize(&q.text),
            relevant: q.relevant_ids.iter().cloned().collect(),
        })
        .collect();
    if dev.is_empty() {
        return Err(invalid(format!("no {} queries to tune on", a.split.as_str())));
    }
    let staging = stage(&a.out)?;
    staging.manifest("bm25 tune", None, None, &[("corpus", &a.corpus), ("queries", &a.queries)], a)?;
    let index = Bm25Index::build(
        corpus.articles.iter().map(|r| (r.id.clone(), pipeline.tokenize(&r.text))),
        Bm25Params::default(),
    )?;
    let grid = tune_bm25_grid(&index, &dev, &a.k1_grid, &a.b_grid, metric)?;
    staging.write("grid.tsv", grid.to_tsv())?;
    finish(
        staging,
        json!({
            "metric": metric.label(),
            "best": {"k1": grid.best.k1, "b": grid.best.b},
            "best_value": grid.best_value,
            "cells": grid.cells.len(),
        }),
    )
}

/// Bi-encoder and run config saved by `train-dsr`.
fn load_dsr(dir: &Path) -> Result<(BiEncoder, RunConfig)> {
    let cfg_path = dir.join(CONFIG_FILE);
    let cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(require(&cfg_path)?)?)
        .map_err(|e| invalid(format!("{}: {e}", cfg_path.display())))?;
    let mut encoder = BiEncoder::new(cfg.encoder.clone(), cfg.seed)?;
    load_checkpoint_into(&mut encoder.store, BufReader::new(File::open(require(&dir.join(ENCODER_FILE))?)?))?;
    Ok((encoder, cfg))
}

fn texts<'a>(items: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
    items.into_iter().collect()
}

fn embed(a: &EmbedArgs) -> Result<()> {
    let corpus = open_corpus(&a.corpus)?;
    let queries = a.queries.as_deref().map(|q| open_queries(q, &corpus)).transpose()?;
    let (encoder, cfg_path, seed) = match &a.dsr {
        Some(dir) => {
            let (enc, cfg) = load_dsr(dir)?;
            (enc, Some(dir.join(CONFIG_FILE)), cfg.seed)
        }
        None => {
            let (cfg, path) = resolve_config(&a.config, None)?;
            cfg.validate()?;
            (BiEncoder::new(cfg.encoder.clone(), cfg.seed)?, path, cfg.seed)
        }
    };
    let staging = stage(&a.out)?;
    let mut inputs = vec![("corpus", a.corpus.as_path())];
    if let Some(d) = &a.dsr {
        inputs.push(("dsr", d.as_path()));
    }
    if let Some(q) = &a.queries {
        inputs.push(("queries", q.as_path()));
    }
    staging.manifest("embed", cfg_path.as_deref(), Some(seed), &inputs, a)?;

    let ids: Vec<String> = corpus.articles.iter().map(|r| r.id.clone()).collect();
    let matrix = encoder.encode_articles(&texts(corpus.articles.iter().map(|r| r.text.as_str())));
    EmbeddingMatrix::new(ids, matrix)?.export(&staging.path(ARTICLE_IDS), &staging.path(ARTICLE_MATRIX))?;
    let mut summary = json!({"articles": corpus.len(), "dim": encoder.config.dim});
    if let Some(queries) = &queries {
        let ids: Vec<String> = queries.iter().map(|q| q.id.clone()).collect();
        let matrix = encoder.encode_queries(&texts(queries.iter().map(|q| q.text.as_str())));
        EmbeddingMatrix::new(ids, matrix)?.export(&staging.path("queries.ids.txt"), &staging.path("queries.emb"))?;
        summary["queries"] = json!(queries.len());
    }
    finish(staging, summary)
}

fn train_dsr_cmd(a: &TrainDsrArgs) -> Result<()> {
    let corpus = open_corpus(&a.corpus)?;
    let queries = open_queries(&a.queries, &corpus)?;
    let (mut cfg, cfg_path) = resolve_config(&a.config, None)?;
    apply_train_flags(&mut cfg.dsr, &a.train);
    cfg.gnn = gnn_config_for(&cfg);
    cfg.validate()?;
    let train = of_split(&queries, Split::Train);
    if train.is_empty() {
        return Err(invalid("no training queries"));
    }
    let dev = of_split(&queries, Split::Dev);
    let staging = stage(&a.out)?;
    staging.manifest(
        "train-dsr",
        cfg_path.as_deref(),
        Some(cfg.seed),
        &[("corpus", &a.corpus), ("queries", &a.queries)],
        a,
    )?;
    staging.write_json(CONFIG_FILE, &cfg)?;

    let lexical = TokenPipeline::french();
    let bm25 = bm25_index(&corpus, &lexical, &cfg)?;
    let mut encoder = BiEncoder::new(cfg.encoder.clone(), cfg.seed)?;
    let mut log = BufWriter::new(File::create(staging.path("metrics.jsonl"))?);
    let report = train_dsr(&mut encoder, &corpus, &train, &dev, Some((&bm25, &lexical)), &cfg.dsr, Some(&mut log))?;
    log.flush()?;
    let mut buf = Vec::new();
    save_checkpoint(&encoder.store, &mut buf)?;
    staging.write(ENCODER_FILE, buf)?;
    finish(staging, training_summary(&report, &cfg.dsr))
}

/// Where the graph encoder's article features come from.
#[derive(serde::Serialize, serde::Deserialize)]
struct FeatureRecord {
    source: String,
    embeddings: Option<PathBuf>,
}

fn node_features(graph: &LegislativeGraph, encoder: &BiEncoder, record: &FeatureRecord) -> Result<NodeFeatures> {
    Ok(match &record.embeddings {
        Some(dir) => {
            let m = import_embeddings(&require(&dir.join(ARTICLE_IDS))?, &require(&dir.join(ARTICLE_MATRIX))?)?;
            init_node_features(graph, FeatureSource::Mixed { articles: &m, encoder })?
        }
        None => init_node_features(graph, FeatureSource::Encoder(encoder))?,
    })
}

fn train_lge_cmd(a: &TrainLgeArgs) -> Result<()> {
    let corpus = open_corpus(&a.corpus)?;
    let queries = open_queries(&a.queries, &corpus)?;
    let (encoder, dsr_cfg) = load_dsr(&a.dsr)?;
    let dsr_cfg_path = a.dsr.join(CONFIG_FILE);
    let (mut cfg, cfg_path) = resolve_config(&a.config, Some(&dsr_cfg_path))?;
    cfg.encoder = dsr_cfg.encoder;
    apply_train_flags(&mut cfg.lge, &a.train);
    if let Some(arch) = a.arch {
        cfg.gnn.arch = arch;
    }
    if let Some(l) = a.layers {
        cfg.gnn.layers = l;
    }
    cfg.gnn = gnn_config_for(&cfg);
    cfg.validate()?;
    let train = of_split(&queries, Split::Train);
    if train.is_empty() {
        return Err(invalid("no training queries"));
    }
    let dev = of_split(&queries, Split::Dev);
    let record = FeatureRecord {
        source: if a.embeddings.is_some() { "imported" } else { "encoder" }.into(),
        embeddings: a.embeddings.as_deref().map(std::path::absolute).transpose()?,
    };

    let graph = LegislativeGraph::from_corpus(&corpus);
    let messages = MessageGraph::new(&graph, cfg.gnn.symmetrize, cfg.gnn.self_loops);
    let features = node_features(&graph, &encoder, &record)?;
    if features.dim() != cfg.gnn.in_dim {
        return Err(invalid(format!("features have dim {}, GNN expects {}", features.dim(), cfg.gnn.in_dim)));
    }
    let staging = stage(&a.out)?;
    let mut inputs = vec![("corpus", a.corpus.as_path()), ("queries", a.queries.as_path()), ("dsr", a.dsr.as_path())];
    if let Some(e) = &a.embeddings {
        inputs.push(("embeddings", e.as_path()));
    }
    staging.manifest("train-lge", cfg_path.as_deref(), Some(cfg.seed), &inputs, a)?;
    staging.write_json(CONFIG_FILE, &cfg)?;
    staging.write_json(FEATURES_FILE, &record)?;

    let train_vectors = encoder.encode_queries(&texts(train.iter().map(|q| q.text.as_str())));
    let dev_vectors = encoder.encode_queries(&texts(dev.iter().map(|q| q.text.as_str())));
    let lexical = TokenPipeline::french();
    let bm25 = bm25_index(&corpus, &lexical, &cfg)?;
    let inputs = GraphInputs {
        graph: &graph,
        messages: &messages,
        features: &features,
    };
    let mut gnn = Gnn::new(cfg.gnn.clone(), cfg.seed)?;
    let mut log = BufWriter::new(File::create(staging.path("metrics.jsonl"))?);
    let report = train_lge(
        &mut gnn,
        inputs,
        &train,
        &train_vectors,
        &dev,
        &dev_vectors,
        Some((&bm25, &lexical)),
        &cfg.lge,
        Some(&mut log),
    )?;
    log.flush()?;
    let mut buf = Vec::new();
    save_checkpoint(&gnn.store, &mut buf)?;
    staging.write(GNN_FILE, buf)?;
    finish(staging, training_summary(&report, &cfg.lge))
}

fn retrieve(a: &RetrieveArgs) -> Result<()> {
    let corpus = open_corpus(&a.corpus)?;
    let queries = open_queries(&a.queries, &corpus)?;
    if a.k == 0 {
        return Err(invalid("--k must be positive"));
    }
    let (encoder, dsr_cfg) = load_dsr(&a.dsr)?;
    let selected = of_split(&queries, a.split);
    let (ids, matrix, similarity, system): (Vec<String>, Tensor, _, &str) = match &a.lge {
        None => {
            let ids = corpus.articles.iter().map(|r| r.id.clone()).collect();
            let m = encoder.encode_articles(&texts(corpus.articles.iter().map(|r| r.text.as_str())));
            (ids, m, dsr_cfg.dsr.loss.similarity, "dsr")
        }
        Some(dir) => {
            let cfg_path = dir.join(CONFIG_FILE);
            let cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(require(&cfg_path)?)?)
                .map_err(|e| invalid(format!("{}: {e}", cfg_path.display())))?;
            let record: FeatureRecord = serde_json::from_str(&std::fs::read_to_string(require(&dir.join(FEATURES_FILE))?)?)?;
            let mut gnn = Gnn::new(cfg.gnn.clone(), cfg.seed)?;
            load_checkpoint_into(&mut gnn.store, BufReader::new(File::open(require(&dir.join(GNN_FILE))?)?))?;
            let graph = LegislativeGraph::from_corpus(&corpus);
            let messages = MessageGraph::new(&graph, cfg.gnn.symmetrize, cfg.gnn.self_loops);
            let features = node_features(&graph, &encoder, &record)?;
            let inputs = GraphInputs {
                graph: &graph,
                messages: &messages,
                features: &features,
            };
            let (ids, z) = inputs.enrich(&gnn)?;
            (ids, z, cfg.lge.loss.similarity, "gdsr")
        }
    };
    let staging = stage(&a.out)?;
    let mut inputs = vec![("corpus", a.corpus.as_path()), ("queries", a.queries.as_path()), ("dsr", a.dsr.as_path())];
    if let Some(l) = &a.lge {
        inputs.push(("lge", l.as_path()));
    }
    staging.manifest("retrieve", None, Some(dsr_cfg.seed), &inputs, a)?;

    let index = DenseIndex::build(ids, &matrix, similarity)?;
    let qm = encoder.encode_queries(&texts(selected.iter().map(|q| q.text.as_str())));
    let qv: Vec<(String, Vec<f64>)> = selected.iter().enumerate().map(|(i, q)| (q.id.clone(), qm.row(i).to_vec())).collect();
    let runs = index.retrieve_batch(&qv, a.k)?;
    let tag = a.tag.clone().unwrap_or_else(|| system.to_string());
    let mut buf = Vec::new();
    write_run(&runs, &tag, &mut buf)?;
    staging.write("run.trec", buf)?;
    finish(
        staging,
        json!({"system": system, "queries": runs.len(), "depth": a.k, "split": a.split.as_str()}),
    )
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let runs = read_run(BufReader::new(File::open(require(&a.run)?)?)).with_context(|| format!("reading {}", a.run.display()))?;
    let qrels = read_qrels(BufReader::new(File::open(require(&a.qrels)?)?)).with_context(|| format!("reading {}", a.qrels.display()))?;
    if a.cutoffs.is_empty() || a.cutoffs.contains(&0) {
        return Err(invalid("cutoffs must be positive"));
    }
    let staging = stage(&a.out)?;
    staging.manifest("evaluate", None, None, &[("run", &a.run), ("qrels", &a.qrels)], a)?;
    let report = evaluate_run(&runs, &qrels, &a.cutoffs)?;
    let value = report.to_json();
    staging.write_json("report.json", &value)?;
    finish(
        staging,
        json!({"num_queries": report.num_queries, "macro": value["macro"], "missing": report.missing}),
    )
}

fn compare(a: &CompareArgs) -> Result<()> {
    let mut named = Vec::new();
    for entry in &a.reports {
        let (name, path) = entry
            .split_once('=')
            .ok_or_else(|| invalid(format!("--report {entry:?} is not NAME=PATH")))?;
        let path = PathBuf::from(path);
        let value: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(require(&path)?)?))?;
        named.push((name.to_string(), path, MetricReport::from_json(&value)?));
    }
    let staging = stage(&a.out)?;
    let inputs: Vec<(&str, &Path)> = named.iter().map(|(n, p, _)| (n.as_str(), p.as_path())).collect();
    staging.manifest("compare", None, None, &inputs, a)?;
    let refs: Vec<(&str, &MetricReport)> = named.iter().map(|(n, _, r)| (n.as_str(), r)).collect();
    let cmp = compare_systems(&refs)?;
    staging.write("comparison.tsv", cmp.to_tsv())?;
    let table: BTreeMap<&str, BTreeMap<&str, f64>> = cmp
        .systems
        .iter()
        .zip(&cmp.values)
        .map(|(s, vals)| (s.as_str(), cmp.metrics.iter().map(String::as_str).zip(vals.iter().copied()).collect()))
        .collect();
    finish(staging, json!({"baseline": cmp.systems[0], "systems": table}))
}

fn gen_fixture(a: &GenFixtureArgs) -> Result<()> {
    let cfg: FixtureConfig = match &a.fixture_config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(require(p)?)?)
            .map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        None => FixtureConfig::default(),
    };
    let staging = stage(&a.out)?;
    let inputs: Vec<(&str, &Path)> = a.fixture_config.iter().map(|p| ("fixture_config", p.as_path())).collect();
    staging.manifest("gen-fixture", None, Some(cfg.seed), &inputs, a)?;
    let f = statute_fixture(&cfg);
    let mut buf = Vec::new();
    write_corpus(&f.articles, &mut buf)?;
    staging.write("articles.jsonl", buf)?;
    let mut buf = Vec::new();
    write_queries(&f.queries, &mut buf)?;
    staging.write("queries.jsonl", buf)?;
    finish(staging, json!({"articles": f.articles.len(), "queries": f.queries.len()}))
}
