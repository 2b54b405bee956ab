use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::QueryRecord;
use crate::lexical::{Bm25Index, TokenPipeline};

/// One (query, positive article) pair and its negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    pub query_id: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

/// The `count` best-scoring articles outside `relevant`, in BM25 order.
pub fn mine_bm25_negatives(
    index: &Bm25Index,
    query_tokens: &[String],
    relevant: &BTreeSet<String>,
    count: usize,
) -> Vec<String> {
    if count == 0 {
        return Vec::new();
    }
    index
        .topk("", query_tokens, count + relevant.len())
        .entries
        .into_iter()
        .map(|e| e.article_id)
        .filter(|id| !relevant.contains(id))
        .take(count)
        .collect()
}

/// One instance per (query, relevant article), carrying that query's static
/// BM25 negatives. Articles are visited in id order for determinism.
pub fn make_instances(
    queries: &[&QueryRecord],
    index: Option<&Bm25Index>,
    pipeline: &TokenPipeline,
    bm25_negatives: usize,
) -> Vec<TrainingInstance> {
    let mut out = Vec::new();
    for q in queries {
        let negatives = match index {
            Some(ix) => mine_bm25_negatives(ix, &pipeline.tokenize(&q.text), &q.relevant_ids, bm25_negatives),
            None => Vec::new(),
        };
        for pos in &q.relevant_ids {
            out.push(TrainingInstance {
                query_id: q.id.clone(),
                positive: pos.clone(),
                negatives: negatives.clone(),
            });
        }
    }
    out
}

/// Shuffles instances with `seed`, cuts them into batches and completes each
/// negative set with the other in-batch positives. A query's relevant
/// articles never appear among its negatives.
pub fn build_batches(
    instances: &[TrainingInstance],
    relevant: &BTreeMap<String, BTreeSet<String>>,
    batch_size: usize,
    seed: u64,
    in_batch: bool,
) -> Vec<Vec<TrainingInstance>> {
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let empty = BTreeSet::new();
    order
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let positives: Vec<&str> = chunk.iter().map(|&i| instances[i].positive.as_str()).collect();
            chunk
                .iter()
                .map(|&i| {
                    let inst = &instances[i];
                    let rel = relevant.get(&inst.query_id).unwrap_or(&empty);
                    let mut seen = BTreeSet::new();
                    let extra = if in_batch { positives.as_slice() } else { &[] };
                    let negatives = inst
                        .negatives
                        .iter()
                        .map(String::as_str)
                        .chain(extra.iter().copied())
                        .filter(|a| *a != inst.positive && !rel.contains(*a) && seen.insert(*a))
                        .map(str::to_string)
                        .collect();
                    TrainingInstance {
                        query_id: inst.query_id.clone(),
                        positive: inst.positive.clone(),
                        negatives,
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexical::Bm25Params;

    fn inst(q: &str, p: &str) -> TrainingInstance {
        TrainingInstance {
            query_id: q.into(),
            positive: p.into(),
            negatives: Vec::new(),
        }
    }

    fn rel(pairs: &[(&str, &[&str])]) -> BTreeMap<String, BTreeSet<String>> {
        pairs
            .iter()
            .map(|(q, r)| (q.to_string(), r.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn pair_batch_swaps_positives() {
        let b = build_batches(&[inst("q1", "a"), inst("q2", "b")], &rel(&[("q1", &["a"]), ("q2", &["b"])]), 2, 0, true);
        assert_eq!(b.len(), 1);
        for i in &b[0] {
            let other = if i.positive == "a" { "b" } else { "a" };
            assert_eq!(i.negatives, [other]);
        }
    }

    #[test]
    fn shared_relevant_article_is_not_a_negative() {
        let r = rel(&[("q1", &["a", "c"]), ("q2", &["c"])]);
        let b = build_batches(&[inst("q1", "a"), inst("q2", "c")], &r, 2, 1, true);
        let q1 = b[0].iter().find(|i| i.query_id == "q1").unwrap();
        let q2 = b[0].iter().find(|i| i.query_id == "q2").unwrap();
        assert!(q1.negatives.is_empty());
        assert_eq!(q2.negatives, ["a"]);
    }

    #[test]
    fn shuffle_is_seeded() {
        let xs: Vec<TrainingInstance> = (0..20).map(|i| inst(&format!("q{i}"), &format!("a{i}"))).collect();
        let r = BTreeMap::new();
        assert_eq!(build_batches(&xs, &r, 3, 7, true), build_batches(&xs, &r, 3, 7, true));
        assert_ne!(build_batches(&xs, &r, 3, 7, true), build_batches(&xs, &r, 3, 8, true));
        assert_eq!(build_batches(&xs, &r, 3, 7, true).len(), 7);
    }

    #[test]
    fn bm25_negatives_skip_relevant() {
        let docs = [("a", "mur mur mur"), ("b", "mur mur"), ("c", "mur"), ("d", "haie")];
        let ix = Bm25Index::build(
            docs.iter().map(|(id, t)| (id.to_string(), t.split(' ').map(str::to_string).collect::<Vec<_>>())),
            Bm25Params::default(),
        )
        .unwrap();
        let q = vec!["mur".to_string()];
        let relevant: BTreeSet<String> = ["a".to_string()].into();
        assert_eq!(mine_bm25_negatives(&ix, &q, &relevant, 2), ["b", "c"]);
        assert!(mine_bm25_negatives(&ix, &q, &relevant, 0).is_empty());
        assert_eq!(mine_bm25_negatives(&ix, &q, &relevant, 10).len(), 3);
    }
}
