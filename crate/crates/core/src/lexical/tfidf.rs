//! TF-IDF vectors and the pairwise similarity matrix used to check how
//! related neighboring articles are.

use std::collections::BTreeMap;

use crate::error::{invalid, Result};

use super::tokenize::TokenPipeline;

/// Sparse TF-IDF model over a fixed document set.
///
/// Weights are raw term counts times a smoothed idf
/// `ln((1 + N) / (1 + df)) + 1`, so every weight is non-negative.
#[derive(Debug, Clone)]
pub struct TfIdfModel {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    /// Per-document `(term index, weight)` pairs sorted by term index.
    pub docs: Vec<Vec<(usize, f64)>>,
}

impl TfIdfModel {
    pub fn fit(docs: &[Vec<String>]) -> Self {
        let mut vocabulary = BTreeMap::new();
        for d in docs {
            for t in d {
                let next = vocabulary.len();
                vocabulary.entry(t.clone()).or_insert(next);
            }
        }
        let mut df = vec![0usize; vocabulary.len()];
        let mut counts = Vec::with_capacity(docs.len());
        for d in docs {
            let mut tf: BTreeMap<usize, usize> = BTreeMap::new();
            for t in d {
                *tf.entry(vocabulary[t]).or_default() += 1;
            }
            for &t in tf.keys() {
                df[t] += 1;
            }
            counts.push(tf);
        }
        let n = docs.len() as f64;
        let idf: Vec<f64> = df
            .iter()
            .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        let docs = counts
            .into_iter()
            .map(|tf| tf.into_iter().map(|(t, c)| (t, c as f64 * idf[t])).collect())
            .collect();
        TfIdfModel {
            vocabulary,
            idf,
            docs,
        }
    }

    pub fn norm(&self, doc: usize) -> f64 {
        self.docs[doc].iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        let (na, nb) = (self.norm(a), self.norm(b));
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let (x, y) = (&self.docs[a], &self.docs[b]);
        let (mut i, mut j, mut dot) = (0, 0, 0.0);
        while i < x.len() && j < y.len() {
            match x[i].0.cmp(&y[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dot += x[i].1 * y[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Articles that normalized to no tokens at all.
    pub empty: Vec<String>,
}

impl SimilarityMatrix {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id");
        for id in &self.ids {
            s.push(',');
            s.push_str(&csv_field(id));
        }
        s.push('\n');
        for (id, row) in self.ids.iter().zip(&self.values) {
            s.push_str(&csv_field(id));
            for v in row {
                s.push_str(&format!(",{v:.6}"));
            }
            s.push('\n');
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Cosine similarity of TF-IDF vectors for every pair of the given articles.
pub fn neighbor_similarity_matrix(
    articles: &[(&str, &str)],
    pipeline: &TokenPipeline,
) -> Result<SimilarityMatrix> {
    if articles.len() < 2 {
        return Err(invalid("neighbor similarity needs at least two articles"));
    }
    let tokens: Vec<Vec<String>> = articles.iter().map(|(_, t)| pipeline.tokenize(t)).collect();
    let model = TfIdfModel::fit(&tokens);
    let n = articles.len();
    let mut values = vec![vec![0.0; n]; n];
    let mut empty = Vec::new();
    for i in 0..n {
        if model.docs[i].is_empty() {
            empty.push(articles[i].0.to_string());
            continue;
        }
        values[i][i] = 1.0;
        for j in 0..i {
            let c = model.cosine(i, j);
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    Ok(SimilarityMatrix {
        ids: articles.iter().map(|(id, _)| id.to_string()).collect(),
        values,
        empty,
    })
}
