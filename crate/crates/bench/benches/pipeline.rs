use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gdsr_bench::BenchData;
use gdsr_core::corpus::Split;
use gdsr_core::encoder::{BiEncoder, EncoderConfig, SimilarityKind};
use gdsr_core::eval::{evaluate_run, DenseIndex};
use gdsr_core::graph::{extract_l_hop_subgraph, Gnn, GnnArch, GnnConfig, NodeKind};
use gdsr_core::lexical::{Bm25Index, Bm25Params, TokenPipeline};
use gdsr_core::tensor::Tensor;
use gdsr_core::training::qrels_of;

fn lexical(c: &mut Criterion) {
    let data = BenchData::new(4);
    let pipeline = TokenPipeline::french();
    let docs: Vec<(String, Vec<String>)> = data
        .corpus
        .articles
        .iter()
        .map(|a| (a.id.clone(), pipeline.tokenize(&a.text)))
        .collect();
    c.bench_function("bm25_build", |b| {
        b.iter(|| Bm25Index::build(black_box(docs.clone()), Bm25Params::default()).unwrap())
    });
    let index = Bm25Index::build(docs, Bm25Params::default()).unwrap();
    let dev = data.split(Split::Dev);
    let tokens: Vec<Vec<String>> = dev.iter().map(|q| pipeline.tokenize(&q.text)).collect();
    c.bench_function("bm25_search_dev", |b| {
        b.iter(|| {
            for (q, t) in dev.iter().zip(&tokens) {
                black_box(index.topk(&q.id, t, 100));
            }
        })
    });
}

fn dense(c: &mut Criterion) {
    let data = BenchData::new(4);
    let encoder = BiEncoder::new(EncoderConfig::default(), 1).unwrap();
    let texts = data.article_texts();
    c.bench_function("encode_articles", |b| b.iter(|| encoder.encode_articles(black_box(&texts))));

    let ids: Vec<String> = data.corpus.articles.iter().map(|a| a.id.clone()).collect();
    let matrix = encoder.encode_articles(&texts);
    let index = DenseIndex::build(ids, &matrix, SimilarityKind::Cosine).unwrap();
    let dev = data.split(Split::Dev);
    let qtexts: Vec<&str> = dev.iter().map(|q| q.text.as_str()).collect();
    let qm = encoder.encode_queries(&qtexts);
    let qv: Vec<(String, Vec<f64>)> = dev.iter().enumerate().map(|(i, q)| (q.id.clone(), qm.row(i).to_vec())).collect();
    c.bench_function("dense_retrieve_dev", |b| b.iter(|| index.retrieve_batch(black_box(&qv), 100).unwrap()));

    let runs = index.retrieve_batch(&qv, 500).unwrap();
    let qrels = qrels_of(&dev);
    c.bench_function("evaluate_run", |b| b.iter(|| evaluate_run(black_box(&runs), &qrels, &[100, 200, 500]).unwrap()));
}

fn graph(c: &mut Criterion) {
    let data = BenchData::new(4);
    let n = data.graph.len();
    let x = Tensor::from_fn(&[n, 64], |i| ((i * 31) % 17) as f64 / 17.0 - 0.5);
    let mut group = c.benchmark_group("gnn_forward");
    for arch in GnnArch::ALL {
        let gnn = Gnn::new(
            GnnConfig {
                arch,
                ..GnnConfig::default()
            },
            1,
        )
        .unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(arch.as_str()), &gnn, |b, gnn| {
            b.iter(|| gnn.forward_tensor(black_box(&x), &data.messages).unwrap())
        });
    }
    group.finish();

    let batch: Vec<usize> = (0..n)
        .filter(|&v| data.graph.node(v).kind == NodeKind::Article)
        .step_by(7)
        .take(32)
        .collect();
    c.bench_function("subgraph_3_hop", |b| {
        b.iter(|| extract_l_hop_subgraph(&data.graph, &data.messages, black_box(&batch), 3).unwrap())
    });
}

criterion_group!(benches, lexical, dense, graph);
criterion_main!(benches);
