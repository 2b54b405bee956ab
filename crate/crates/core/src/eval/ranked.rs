use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub article_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// A filter set for one query, ordered by decreasing score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Keeps the `k` best of `scores`; ties are broken by ascending article id.
    pub fn from_scores<I>(query_id: &str, scores: I, k: usize) -> Self
    where
        I: IntoIterator<Item = (String, f64)>,
    {
        let mut all: Vec<(String, f64)> = scores.into_iter().collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(k);
        let entries = all
            .into_iter()
            .enumerate()
            .map(|(i, (article_id, score))| RankedEntry {
                article_id,
                score,
                rank: i + 1,
            })
            .collect();
        RankedList {
            query_id: query_id.to_string(),
            entries,
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.article_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
