use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::rc::Rc;

use gdsr_core::corpus::{load_corpus, write_corpus, ArticleRecord, Corpus, TreeNodeKind};
use gdsr_core::encoder::{BiEncoder, EncoderConfig, Pooling, SimilarityKind, PAD_TOKEN};
use gdsr_core::eval::{average_precision, r_precision, recall_at_k, DenseIndex, RankedList};
use gdsr_core::graph::{extract_l_hop_subgraph, Activation, Gnn, GnnArch, GnnConfig, LegislativeGraph, MessageGraph};
use gdsr_core::lexical::{Bm25Index, Bm25Params, TfIdfModel};
use gdsr_core::tensor::{read_checkpoint, save_checkpoint, ParamStore, Tape, Tensor};
use gdsr_core::training::{build_batches, contrastive_nll, LossConfig, TrainingInstance};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn words(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

fn doc_strategy(vocab: usize, max_len: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(0..vocab, 1..=max_len).prop_map(|ix| ix.into_iter().map(|i| format!("w{i}")).collect())
}

fn corpus_strategy() -> impl Strategy<Value = Vec<(String, Vec<String>)>> {
    prop::collection::vec(doc_strategy(10, 20), 1..12)
        .prop_map(|docs| docs.into_iter().enumerate().map(|(i, d)| (format!("d{i}"), d)).collect())
}

fn articles_strategy() -> impl Strategy<Value = Vec<ArticleRecord>> {
    let path = prop::collection::vec(0..3usize, 1..=4)
        .prop_map(|p| p.iter().enumerate().map(|(depth, h)| format!("H{depth}.{h}")).collect::<Vec<_>>());
    prop::collection::vec((path, doc_strategy(20, 12)), 1..30).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (heading_path, text))| ArticleRecord {
                id: format!("art{i}"),
                text: format!("Art. {i}. {}", text.join(" ")),
                heading_path,
            })
            .collect()
    })
}

fn parents(seed: u64, n: usize) -> Vec<Option<usize>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let locality = r.gen_range(1..=n);
    (0..n)
        .map(|i| (i > 0 && !r.gen_bool(0.05)).then(|| r.gen_range(i.saturating_sub(locality)..i)))
        .collect()
}

fn ranked(ids: &[String]) -> RankedList {
    let n = ids.len();
    RankedList::from_scores("q", ids.iter().enumerate().map(|(i, d)| (d.clone(), (n - i) as f64)), n)
}

/// A ranking over `d0..d{m}` and a non-empty relevant subset of that universe.
fn ranking_case() -> impl Strategy<Value = (Vec<String>, HashSet<String>)> {
    (1usize..30, any::<u64>()).prop_map(|(m, seed)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let universe = words(m);
        let mut ranking = universe.clone();
        ranking.shuffle(&mut r);
        ranking.truncate(r.gen_range(0..=m));
        let nrel = r.gen_range(1..=m);
        let rel = universe.choose_multiple(&mut r, nrel).cloned().collect();
        (ranking, rel)
    })
}

fn nll_of_scores(scores: &[f64], tau: f64) -> f64 {
    let mut tape = Tape::new();
    let s = tape.input(Tensor::matrix(1, scores.len(), scores.to_vec()));
    let l = tape.contrastive_nll(s, Rc::new(vec![(0..scores.len()).collect()]), tau).unwrap();
    tape.value(l).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_jsonl_round_trip(articles in articles_strategy()) {
        let mut canonical = Vec::new();
        write_corpus(&articles, &mut canonical).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("articles.jsonl");
        std::fs::write(&path, &canonical).unwrap();
        let corpus = load_corpus(&path).unwrap();
        let mut again = Vec::new();
        write_corpus(&corpus.articles, &mut again).unwrap();
        prop_assert_eq!(again, canonical);
    }

    #[test]
    fn tree_is_a_forest_with_article_leaves(articles in articles_strategy()) {
        let corpus = Corpus::from_articles(articles).unwrap();
        let tree = &corpus.tree;
        prop_assert_eq!(tree.len(), tree.edge_count() + tree.roots.len());
        for v in 0..tree.len() {
            let mut cur = v;
            let mut steps = 0;
            while let Some(p) = tree.nodes[cur].parent {
                cur = p;
                steps += 1;
                prop_assert!(steps <= tree.len(), "cycle through {}", v);
            }
            prop_assert!(tree.roots.contains(&cur));
            if let TreeNodeKind::Article { .. } = tree.nodes[v].kind {
                prop_assert!(tree.nodes[v].children.is_empty());
            }
        }
        for i in 0..corpus.len() {
            let leaf = tree.article_node(i);
            prop_assert_eq!(&tree.nodes[leaf].kind, &TreeNodeKind::Article { article: i });
        }
    }

    #[test]
    fn bm25_index_statistics(docs in corpus_strategy(), k1 in 0.0..3.0f64, b in 0.0..=1.0f64) {
        let index = Bm25Index::build(docs.clone(), Bm25Params::new(k1, b).unwrap()).unwrap();
        let mean = docs.iter().map(|d| d.1.len() as f64).sum::<f64>() / docs.len() as f64;
        prop_assert!((index.avgdl() - mean).abs() < 1e-12);
        for t in words(10) {
            let p = index.postings(&t);
            prop_assert!(p.windows(2).all(|w| w[0].doc < w[1].doc));
            prop_assert!(index.idf(&t) >= 0.0);
        }
    }

    #[test]
    fn bm25_scores_are_non_negative(docs in corpus_strategy(), query in doc_strategy(12, 6), k1 in 0.0..3.0f64, b in 0.0..=1.0f64) {
        let index = Bm25Index::build(docs, Bm25Params::new(k1, b).unwrap()).unwrap();
        prop_assert!(index.score_all(&query).iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn bm25_strictly_increasing_in_tf(docs in corpus_strategy(), pick in any::<u64>(), k1 in 0.01..3.0f64, b in 0.0..=1.0f64) {
        let mut r = ChaCha8Rng::seed_from_u64(pick);
        let d = r.gen_range(0..docs.len());
        let term = docs[d].1.choose(&mut r).unwrap().clone();
        let others: Vec<usize> = (0..docs[d].1.len()).filter(|&i| docs[d].1[i] != term).collect();
        prop_assume!(!others.is_empty());
        let params = Bm25Params::new(k1, b).unwrap();
        let before = Bm25Index::build(docs.clone(), params).unwrap().score_doc(&[term.clone()], d);
        let mut bumped = docs;
        bumped[d].1[*others.choose(&mut r).unwrap()] = term.clone();
        let after = Bm25Index::build(bumped, params).unwrap().score_doc(&[term], d);
        prop_assert!(after > before, "{} -> {}", before, after);
    }

    #[test]
    fn bm25_ranking_is_deterministic(docs in corpus_strategy(), query in doc_strategy(12, 4)) {
        let a = Bm25Index::build(docs.clone(), Bm25Params::default()).unwrap();
        let b = Bm25Index::build(docs, Bm25Params::default()).unwrap();
        prop_assert_eq!(a.topk("q", &query, 20), b.topk("q", &query, 20));
    }

    #[test]
    fn tfidf_cosine_symmetric_and_bounded(docs in prop::collection::vec(doc_strategy(8, 10), 2..8)) {
        let model = TfIdfModel::fit(&docs);
        for i in 0..docs.len() {
            for j in 0..docs.len() {
                let c = model.cosine(i, j);
                prop_assert_eq!(c, model.cosine(j, i));
                prop_assert!((0.0..=1.0 + 1e-12).contains(&c));
            }
        }
    }

    #[test]
    fn softmax_rows_normalized_and_shift_invariant(data in prop::collection::vec(-30.0..30.0f64, 12), shift in -50.0..50.0f64) {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(3, 4, data.clone()));
        let y = tape.softmax_rows(x);
        let xs = tape.input(Tensor::matrix(3, 4, data.iter().map(|v| v + shift).collect()));
        let ys = tape.softmax_rows(xs);
        for r in 0..3 {
            prop_assert!((tape.value(y).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in tape.value(y).row(r).iter().zip(tape.value(ys).row(r)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padding_in_last_chunk_is_ignored(len in 1usize..16, pads in 0usize..4, seed in any::<u64>(), max_pool in any::<bool>()) {
        let cfg = EncoderConfig {
            dim: 8,
            max_chunk_len: 4,
            max_doc_len: 16,
            pooling: if max_pool { Pooling::Max } else { Pooling::Mean },
            hash_buckets: 64,
            layers: 1,
            ..EncoderConfig::default()
        };
        let enc = BiEncoder::new(cfg, seed).unwrap();
        let room = (4 - len % 4) % 4;
        let mut tokens: Vec<String> = (0..len).map(|i| format!("t{}", (seed as usize + i * 7) % 11)).collect();
        let base = enc.encode_article_tokens(&tokens);
        tokens.extend(std::iter::repeat(PAD_TOKEN.to_string()).take(pads.min(room)));
        prop_assert_eq!(enc.encode_article_tokens(&tokens), base);
    }

    #[test]
    fn recall_non_decreasing_in_k((ranking, rel) in ranking_case()) {
        let list = ranked(&ranking);
        let mut prev = 0.0;
        for k in 1..=ranking.len() + 2 {
            let r = recall_at_k(&list, &rel, k).unwrap();
            prop_assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn r_precision_is_recall_at_relevant_count((ranking, rel) in ranking_case()) {
        let list = ranked(&ranking);
        prop_assert_eq!(r_precision(&list, &rel).unwrap(), recall_at_k(&list, &rel, rel.len()).unwrap());
    }

    #[test]
    fn average_precision_one_iff_relevant_on_top((ranking, rel) in ranking_case()) {
        let list = ranked(&ranking);
        let top = ranking.len() >= rel.len() && ranking[..rel.len()].iter().all(|d| rel.contains(d));
        prop_assert_eq!(average_precision(&list, &rel).unwrap() == 1.0, top);
    }

    #[test]
    fn nll_invariant_to_negative_order(seed in any::<u64>(), n in 0usize..8, tau in prop::sample::select(vec![1.0, 0.1, 0.01])) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut v = |_: usize| -> Vec<f64> { (0..5).map(|_| r.gen_range(-1.0..1.0)).collect() };
        let (q, p) = (v(0), v(1));
        let negs: Vec<Vec<f64>> = (0..n).map(&mut v).collect();
        let mut shuffled: Vec<&[f64]> = negs.iter().map(|x| x.as_slice()).collect();
        let cfg = LossConfig { temperature: tau, ..LossConfig::default() };
        let base = contrastive_nll(&q, &p, &shuffled, &cfg).unwrap().loss;
        shuffled.shuffle(&mut r);
        prop_assert_eq!(contrastive_nll(&q, &p, &shuffled, &cfg).unwrap().loss, base);
    }

    #[test]
    fn nll_monotone_in_scores(scores in prop::collection::vec(-1.0..1.0f64, 2..8), delta in 0.01..1.0f64, which in any::<prop::sample::Index>(), tau in prop::sample::select(vec![1.0, 0.1])) {
        let base = nll_of_scores(&scores, tau);
        let mut up = scores.clone();
        up[0] += delta;
        prop_assert!(nll_of_scores(&up, tau) < base);
        let mut neg = scores.clone();
        neg[1 + which.index(scores.len() - 1)] += delta;
        prop_assert!(nll_of_scores(&neg, tau) > base);
    }

    #[test]
    fn nll_temperature_limits(rest in prop::collection::vec(-1.0..1.0f64, 1..7), gap in 0.1..1.0f64) {
        let top = rest.iter().copied().fold(f64::NEG_INFINITY, f64::max) + gap;
        let winning: Vec<f64> = std::iter::once(top).chain(rest.iter().copied()).collect();
        let losses: Vec<f64> = [1.0, 0.1, 0.01].iter().map(|&t| nll_of_scores(&winning, t)).collect();
        prop_assert!(losses[0] > losses[1] && losses[1] > losses[2]);
        prop_assert!(losses[2] <= rest.len() as f64 * (-gap / 0.01).exp() * 1.0001);

        let bottom = rest.iter().copied().fold(f64::INFINITY, f64::min) - gap;
        let losing: Vec<f64> = std::iter::once(bottom).chain(rest.iter().copied()).collect();
        let losses: Vec<f64> = [1.0, 0.1, 0.01].iter().map(|&t| nll_of_scores(&losing, t)).collect();
        prop_assert!(losses[0] < losses[1] && losses[1] < losses[2]);
        prop_assert!(losses[2] >= gap / 0.01 * (1.0 - 1e-12));
    }

    #[test]
    fn in_batch_negatives_never_relevant(seed in any::<u64>(), batch in 1usize..9) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let articles = words(12);
        let mut relevant: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut instances = Vec::new();
        for q in 0..10 {
            let qid = format!("q{q}");
            let nrel = r.gen_range(1..4);
            let rel: BTreeSet<String> = articles.choose_multiple(&mut r, nrel).cloned().collect();
            for p in &rel {
                let negatives = articles.iter().filter(|a| !rel.contains(*a)).take(2).cloned().collect();
                instances.push(TrainingInstance { query_id: qid.clone(), positive: p.clone(), negatives });
            }
            relevant.insert(qid, rel);
        }
        for b in build_batches(&instances, &relevant, batch, seed, true) {
            for inst in b {
                prop_assert!(inst.negatives.iter().all(|n| !relevant[&inst.query_id].contains(n)));
            }
        }
    }

    #[test]
    fn checkpoint_round_trip(shapes in prop::collection::vec((1usize..5, 1usize..5), 1..6), seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (i, (a, b)) in shapes.iter().enumerate() {
            store.add(&format!("p{i}"), Tensor::from_fn(&[*a, *b], |_| r.gen_range(-1e3..1e3)));
        }
        let mut bytes = Vec::new();
        save_checkpoint(&store, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.len(), store.len());
        for ((name, t), id) in back.iter().zip(store.ids()) {
            prop_assert_eq!(name.as_str(), store.name(id));
            prop_assert_eq!(t, store.value(id));
        }
    }

    #[test]
    fn dense_retrieval_independent_of_thread_count(seed in any::<u64>(), n in 2usize..40) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
        let m = Tensor::from_fn(&[n, 6], |_| r.gen_range(-1.0..1.0));
        let queries: Vec<(String, Vec<f64>)> = (0..5).map(|i| (format!("q{i}"), (0..6).map(|_| r.gen_range(-1.0..1.0)).collect())).collect();
        let index = DenseIndex::build(ids, &m, SimilarityKind::Cosine).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| index.retrieve_batch(&queries, 10).unwrap())
        };
        prop_assert_eq!(run(1), run(3));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn subgraph_matches_bfs(seed in any::<u64>(), n in 2usize..120, hops in 1usize..4, batch_size in 1usize..6) {
        let graph = LegislativeGraph::from_parent_array(&parents(seed, n)).unwrap();
        let full = MessageGraph::new(&graph, true, true);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let batch: Vec<usize> = (0..n).collect::<Vec<_>>().choose_multiple(&mut r, batch_size.min(n)).copied().collect();
        let sub = extract_l_hop_subgraph(&graph, &full, &batch, hops).unwrap();

        let mut reached: BTreeSet<usize> = batch.iter().copied().collect();
        for _ in 0..hops {
            let mut next = reached.clone();
            for &(p, c) in graph.edges() {
                if reached.contains(&p) {
                    next.insert(c);
                }
                if reached.contains(&c) {
                    next.insert(p);
                }
            }
            reached = next;
        }
        prop_assert_eq!(sub.nodes.clone(), reached.into_iter().collect::<Vec<_>>());
        for (&g, &l) in batch.iter().zip(&sub.batch_local) {
            prop_assert_eq!(sub.global(l), g);
            prop_assert_eq!(sub.local(g), Some(l));
        }
    }

    #[test]
    fn gnn_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..40, arch in prop::sample::select(GnnArch::ALL.to_vec())) {
        let par = parents(seed, n);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let mut permuted = vec![None; n];
        for v in 0..n {
            permuted[perm[v]] = par[v].map(|p| perm[p]);
        }
        let cfg = GnnConfig {
            arch,
            layers: 2,
            in_dim: 4,
            hidden_dim: 6,
            out_dim: 3,
            heads: if arch.is_attention() { 2 } else { 1 },
            activation: Activation::Gelu,
            ..GnnConfig::default()
        };
        let gnn = Gnn::new(cfg, seed).unwrap();
        let x = Tensor::from_fn(&[n, 4], |_| r.gen_range(-1.0..1.0));
        let xp = Tensor::from_fn(&[n, 4], |k| {
            let (row, c) = (k / 4, k % 4);
            let v = perm.iter().position(|&p| p == row).unwrap();
            x.get(v, c)
        });
        let ga = LegislativeGraph::from_parent_array(&par).unwrap();
        let gb = LegislativeGraph::from_parent_array(&permuted).unwrap();
        let za = gnn.forward_tensor(&x, &MessageGraph::new(&ga, true, true)).unwrap();
        let zb = gnn.forward_tensor(&xp, &MessageGraph::new(&gb, true, true)).unwrap();
        for v in 0..n {
            for (a, b) in za.row(v).iter().zip(zb.row(perm[v])) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn attention_non_negative_and_normalized(seed in any::<u64>(), n in 2usize..60, arch in prop::sample::select(vec![GnnArch::Gat, GnnArch::Gatv2])) {
        let graph = LegislativeGraph::from_parent_array(&parents(seed, n)).unwrap();
        let mg = MessageGraph::new(&graph, true, true);
        let cfg = GnnConfig { arch, layers: 2, in_dim: 4, hidden_dim: 6, out_dim: 3, heads: 3, ..GnnConfig::default() };
        let gnn = Gnn::new(cfg, seed).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[n, 4], |_| r.gen_range(-3.0..3.0));
        for layer in gnn.attention(&x, &mg).unwrap() {
            for head in layer {
                let mut sums = vec![0.0; n];
                for (e, &v) in mg.dst.iter().enumerate() {
                    prop_assert!(head[e] >= 0.0);
                    sums[v] += head[e];
                }
                prop_assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-9));
            }
        }
    }
}
