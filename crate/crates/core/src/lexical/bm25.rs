//! Okapi BM25 over an in-memory inverted index.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::{RankMetric, RankedList};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    /// The tuned values reported for statute retrieval.
    fn default() -> Self {
        Bm25Params { k1: 2.5, b: 0.2 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        if !(k1 >= 0.0 && k1.is_finite()) {
            return Err(invalid(format!("k1 must be finite and >= 0, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(invalid(format!("b must lie in [0, 1], got {b}")));
        }
        Ok(Bm25Params { k1, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    avgdl: f64,
    pub params: Bm25Params,
}

impl Bm25Index {
    /// Builds an index over pre-tokenized documents. Internal doc numbers
    /// follow input order, so postings are sorted by construction.
    pub fn build<I, S>(docs: I, params: Bm25Params) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<String>)>,
        S: Into<String>,
    {
        let mut doc_ids = Vec::new();
        let mut doc_lens = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut seen = HashSet::new();
        for (id, tokens) in docs {
            let id = id.into();
            if !seen.insert(id.clone()) {
                return Err(invalid(format!("duplicate document id {id:?}")));
            }
            let doc = doc_ids.len() as u32;
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, f) in tf {
                postings.entry(term.to_string()).or_default().push(Posting { doc, tf: f });
            }
            doc_ids.push(id);
            doc_lens.push(tokens.len() as u32);
        }
        let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        let avgdl = if doc_lens.is_empty() {
            0.0
        } else {
            total as f64 / doc_lens.len() as f64
        };
        Ok(Bm25Index {
            doc_ids,
            doc_lens,
            postings,
            avgdl,
            params,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, doc: usize) -> u32 {
        self.doc_lens[doc]
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn doc_index(&self, id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == id)
    }

    /// Smoothed Robertson idf; always non-negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let f = tf as f64;
        let norm = if self.avgdl > 0.0 {
            self.doc_lens[doc] as f64 / self.avgdl
        } else {
            0.0
        };
        idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * norm))
    }

    pub fn score(&self, query: &[String], doc_id: &str) -> Result<f64> {
        let doc = self
            .doc_index(doc_id)
            .ok_or_else(|| invalid(format!("unknown document id {doc_id:?}")))?;
        Ok(self.score_doc(query, doc))
    }

    pub fn score_doc(&self, query: &[String], doc: usize) -> f64 {
        let mut s = 0.0;
        for t in query {
            let p = self.postings(t);
            if let Ok(i) = p.binary_search_by_key(&(doc as u32), |p| p.doc) {
                s += self.term_weight(self.idf(t), p[i].tf, doc);
            }
        }
        s
    }

    /// Scores for every document, accumulated term-at-a-time in query order.
    pub fn score_all(&self, query: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.num_docs()];
        for t in query {
            let idf = self.idf(t);
            for p in self.postings(t) {
                acc[p.doc as usize] += self.term_weight(idf, p.tf, p.doc as usize);
            }
        }
        acc
    }

    pub fn topk(&self, query_id: &str, query: &[String], k: usize) -> RankedList {
        let scores = self.score_all(query);
        RankedList::from_scores(
            query_id,
            self.doc_ids.iter().cloned().zip(scores),
            k,
        )
    }

    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn load<R: Read>(input: R) -> Result<Self> {
        let idx: Bm25Index = serde_json::from_reader(input)?;
        if idx.doc_ids.len() != idx.doc_lens.len() {
            return Err(Error::Format("bm25 index: id/length count mismatch".into()));
        }
        Ok(idx)
    }
}

pub fn bm25_score(index: &Bm25Index, query: &[String], doc_id: &str) -> Result<f64> {
    index.score(query, doc_id)
}

pub fn bm25_topk(index: &Bm25Index, query_id: &str, query: &[String], k: usize) -> RankedList {
    index.topk(query_id, query, k)
}

/// A tokenized dev query with its judgments.
#[derive(Debug, Clone)]
pub struct DevQuery {
    pub id: String,
    pub tokens: Vec<String>,
    pub relevant: HashSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub k1: f64,
    pub b: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub metric: RankMetric,
    pub best: Bm25Params,
    pub best_value: f64,
    pub cells: Vec<GridCell>,
}

impl GridSearch {
    pub fn to_tsv(&self) -> String {
        let mut s = format!("k1\tb\t{}\n", self.metric.label());
        for c in &self.cells {
            s.push_str(&format!("{}\t{}\t{:.6}\n", c.k1, c.b, c.value));
        }
        s
    }
}

/// Evaluates every `(k1, b)` pair on the dev queries and picks the best one.
/// Ties go to the lexicographically smallest `(k1, b)`.
pub fn tune_bm25_grid(
    index: &Bm25Index,
    dev: &[DevQuery],
    k1_grid: &[f64],
    b_grid: &[f64],
    metric: RankMetric,
) -> Result<GridSearch> {
    if dev.is_empty() {
        return Err(invalid("bm25 grid search needs a non-empty dev set"));
    }
    if k1_grid.is_empty() || b_grid.is_empty() {
        return Err(invalid("bm25 grid search needs non-empty k1 and b grids"));
    }
    let mut k1s = k1_grid.to_vec();
    let mut bs = b_grid.to_vec();
    k1s.sort_by(f64::total_cmp);
    k1s.dedup();
    bs.sort_by(f64::total_cmp);
    bs.dedup();

    let depth = metric.depth(index.num_docs());
    let mut work = index.clone();
    let mut cells = Vec::with_capacity(k1s.len() * bs.len());
    let mut best: Option<(Bm25Params, f64)> = None;
    for &k1 in &k1s {
        for &b in &bs {
            work.params = Bm25Params::new(k1, b)?;
            let total: f64 = dev
                .iter()
                .map(|q| {
                    let ranked = work.topk(&q.id, &q.tokens, depth);
                    metric.evaluate(&ranked, &q.relevant)
                })
                .sum::<Result<f64>>()?;
            let value = total / dev.len() as f64;
            if best.map_or(true, |(_, v)| value > v) {
                best = Some((work.params, value));
            }
            cells.push(GridCell { k1, b, value });
        }
    }
    let (best, best_value) = best.expect("non-empty grid");
    Ok(GridSearch {
        metric,
        best,
        best_value,
        cells,
    })
}
