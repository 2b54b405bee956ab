//! Exact brute-force dense retrieval.

use std::collections::HashSet;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::encoder::{similarity, SimilarityKind};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

use super::RankedList;

const MAGIC: &[u8; 8] = b"GDSRIDX1";

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    ids: Vec<String>,
    dim: usize,
    rows: Vec<f64>,
    similarity: SimilarityKind,
    pub graph_enriched: bool,
}

impl DenseIndex {
    /// Rows are L2-normalized at build time when the similarity is cosine.
    pub fn build(ids: Vec<String>, matrix: &Tensor, similarity: SimilarityKind) -> Result<Self> {
        let (n, dim) = matrix.dims2()?;
        if n != ids.len() {
            return Err(invalid(format!("{} ids for {n} embedding rows", ids.len())));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(invalid(format!("duplicate article id {id:?} in dense index")));
            }
        }
        let mut rows = matrix.data().to_vec();
        for (i, row) in rows.chunks_mut(dim.max(1)).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding row for {:?}", ids[i])));
            }
            if similarity == SimilarityKind::Cosine {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(invalid(format!("zero embedding for {:?} under cosine", ids[i])));
                }
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Ok(DenseIndex {
            ids,
            dim,
            rows,
            similarity,
            graph_enriched: false,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn similarity(&self) -> SimilarityKind {
        self.similarity
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Scores every stored row against `query`.
    pub fn score_all(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(Error::Shape(format!(
                "query has dim {}, index has dim {}",
                query.len(),
                self.dim
            )));
        }
        match self.similarity {
            SimilarityKind::Cosine => {
                let norm = query.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(invalid("zero query vector under cosine"));
                }
                let q: Vec<f64> = query.iter().map(|v| v / norm).collect();
                Ok((0..self.len()).map(|i| dot(&q, self.row(i))).collect())
            }
            kind => (0..self.len()).map(|i| similarity(query, self.row(i), kind)).collect(),
        }
    }

    pub fn retrieve_topk(&self, query_id: &str, query: &[f64], k: usize) -> Result<RankedList> {
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let scores = self.score_all(query)?;
        Ok(RankedList::from_scores(query_id, self.ids.iter().cloned().zip(scores), k))
    }

    /// Runs many queries in parallel; output order follows input order.
    pub fn retrieve_batch(&self, queries: &[(String, Vec<f64>)], k: usize) -> Result<Vec<RankedList>> {
        queries
            .par_iter()
            .map(|(id, q)| self.retrieve_topk(id, q, k))
            .collect()
    }

    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&[self.similarity as u8, self.graph_enriched as u8])?;
        out.write_all(&(self.ids.len() as u32).to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        for id in &self.ids {
            out.write_all(&(id.len() as u32).to_le_bytes())?;
            out.write_all(id.as_bytes())?;
        }
        for v in &self.rows {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("dense index: bad magic".into()));
        }
        let mut flags = [0u8; 2];
        input.read_exact(&mut flags)?;
        let similarity = SimilarityKind::from_u8(flags[0])
            .ok_or_else(|| Error::Format(format!("dense index: unknown similarity {}", flags[0])))?;
        let n = read_u32(&mut input)? as usize;
        let dim = read_u32(&mut input)? as usize;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = read_u32(&mut input)? as usize;
            let mut buf = vec![0u8; len];
            input.read_exact(&mut buf)?;
            ids.push(String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))?);
        }
        let mut rows = vec![0.0; n * dim];
        let mut b = [0u8; 8];
        for v in rows.iter_mut() {
            input.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        Ok(DenseIndex {
            ids,
            dim,
            rows,
            similarity,
            graph_enriched: flags[1] != 0,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
