//! Rank metrics over binary relevance.

use std::collections::HashSet;

use crate::error::{invalid, Result};

use super::RankedList;

fn check(relevant: &HashSet<String>) -> Result<()> {
    if relevant.is_empty() {
        Err(invalid("metric undefined for an empty relevant set"))
    } else {
        Ok(())
    }
}

/// Fraction of the relevant articles that appear in the top `k`.
pub fn recall_at_k(ranked: &RankedList, relevant: &HashSet<String>, k: usize) -> Result<f64> {
    check(relevant)?;
    let hits = ranked.ids().take(k).filter(|id| relevant.contains(*id)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Precision at depth R = |relevant|. Lists shorter than R count the
/// missing positions as misses.
pub fn r_precision(ranked: &RankedList, relevant: &HashSet<String>) -> Result<f64> {
    check(relevant)?;
    let r = relevant.len();
    let hits = ranked.ids().take(r).filter(|id| relevant.contains(*id)).count();
    Ok(hits as f64 / r as f64)
}

pub fn average_precision(ranked: &RankedList, relevant: &HashSet<String>) -> Result<f64> {
    check(relevant)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranked.ids().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// A single per-query metric, used for tuning and checkpoint selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankMetric {
    Recall(usize),
    RPrecision,
    AveragePrecision,
}

impl RankMetric {
    pub fn label(&self) -> String {
        match self {
            RankMetric::Recall(k) => format!("R@{k}"),
            RankMetric::RPrecision => "RP".into(),
            RankMetric::AveragePrecision => "AP".into(),
        }
    }

    /// Ranking depth needed to compute the metric over `num_docs` documents.
    pub fn depth(&self, num_docs: usize) -> usize {
        match self {
            RankMetric::Recall(k) => (*k).min(num_docs),
            _ => num_docs.min(super::DEFAULT_RUN_DEPTH),
        }
    }

    pub fn evaluate(&self, ranked: &RankedList, relevant: &HashSet<String>) -> Result<f64> {
        match self {
            RankMetric::Recall(k) => recall_at_k(ranked, relevant, *k),
            RankMetric::RPrecision => r_precision(ranked, relevant),
            RankMetric::AveragePrecision => average_precision(ranked, relevant),
        }
    }
}

impl std::str::FromStr for RankMetric {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "rp" | "mrp" | "r-precision" => Ok(RankMetric::RPrecision),
            "ap" | "map" => Ok(RankMetric::AveragePrecision),
            _ => lower
                .strip_prefix("r@")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k > 0)
                .map(RankMetric::Recall)
                .ok_or_else(|| invalid(format!("unknown metric {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(ids: &[&str]) -> RankedList {
        RankedList::from_scores(
            "q",
            ids.iter().enumerate().map(|(i, id)| (id.to_string(), -(i as f64))),
            ids.len(),
        )
    }

    fn rel(ids: &[&str]) -> HashSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&list(&["a", "x", "y"]), &rel(&["a", "b"]), 3).unwrap(), 0.5);
        assert_eq!(recall_at_k(&list(&["b", "a", "y"]), &rel(&["a", "b"]), 3).unwrap(), 1.0);
        assert!(recall_at_k(&list(&["a"]), &rel(&[]), 3).is_err());
    }

    #[test]
    fn r_precision_examples() {
        assert_eq!(r_precision(&list(&["a", "x"]), &rel(&["a", "b"])).unwrap(), 0.5);
        assert_eq!(r_precision(&list(&["b", "a", "x"]), &rel(&["a", "b"])).unwrap(), 1.0);
        // short list: the missing position is a miss
        assert_eq!(r_precision(&list(&["a"]), &rel(&["a", "b"])).unwrap(), 0.5);
    }

    #[test]
    fn average_precision_examples() {
        let ap = average_precision(&list(&["a", "x", "b"]), &rel(&["a", "b"])).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((ap - 0.833333).abs() < 1e-6);
        assert_eq!(average_precision(&list(&["b", "a", "x"]), &rel(&["a", "b"])).unwrap(), 1.0);
        assert_eq!(average_precision(&list(&["x", "y"]), &rel(&["a", "b"])).unwrap(), 0.0);
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("R@10".parse::<RankMetric>().unwrap(), RankMetric::Recall(10));
        assert_eq!("mAP".parse::<RankMetric>().unwrap(), RankMetric::AveragePrecision);
        assert!("R@0".parse::<RankMetric>().is_err());
        assert!("ndcg".parse::<RankMetric>().is_err());
    }
}
