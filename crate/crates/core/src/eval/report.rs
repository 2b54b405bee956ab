use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::metrics::{average_precision, r_precision, recall_at_k};
use super::trec::Qrels;
use super::RankedList;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    /// Keyed by cutoff.
    pub recall: BTreeMap<usize, f64>,
    pub ap: f64,
    pub rp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cutoffs: Vec<usize>,
    pub num_queries: usize,
    pub macro_recall: BTreeMap<usize, f64>,
    pub map: f64,
    pub mrp: f64,
    pub per_query: BTreeMap<String, QueryMetrics>,
    /// Judged queries with no ranking; scored as all zeros.
    pub missing: Vec<String>,
}

impl MetricReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.macro_recall.get(&k).copied()
    }

    /// Named macro values in display order (`R@k`..., `mAP`, `mRP`).
    pub fn macro_values(&self) -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> = self
            .cutoffs
            .iter()
            .map(|k| (format!("R@{k}"), self.macro_recall[k]))
            .collect();
        v.push(("mAP".into(), self.map));
        v.push(("mRP".into(), self.mrp));
        v
    }

    pub fn to_json(&self) -> serde_json::Value {
        let macro_block: serde_json::Map<String, serde_json::Value> = self
            .macro_values()
            .into_iter()
            .map(|(k, v)| (k, v.into()))
            .collect();
        let per_query: serde_json::Map<String, serde_json::Value> = self
            .per_query
            .iter()
            .map(|(q, m)| {
                let mut o = serde_json::Map::new();
                for (k, v) in &m.recall {
                    o.insert(format!("R@{k}"), (*v).into());
                }
                o.insert("AP".into(), m.ap.into());
                o.insert("RP".into(), m.rp.into());
                (q.clone(), o.into())
            })
            .collect();
        serde_json::json!({
            "num_queries": self.num_queries,
            "cutoffs": self.cutoffs,
            "macro": macro_block,
            "per_query": per_query,
            "missing": self.missing,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let bad = |m: &str| invalid(format!("report json: {m}"));
        let cutoffs: Vec<usize> = serde_json::from_value(v["cutoffs"].clone())?;
        let missing: Vec<String> = serde_json::from_value(v["missing"].clone())?;
        let num = |o: &serde_json::Value, k: &str| o[k].as_f64().ok_or_else(|| bad(&format!("missing {k}")));
        let mac = &v["macro"];
        let mut macro_recall = BTreeMap::new();
        for &k in &cutoffs {
            macro_recall.insert(k, num(mac, &format!("R@{k}"))?);
        }
        let mut per_query = BTreeMap::new();
        for (q, o) in v["per_query"].as_object().ok_or_else(|| bad("per_query"))? {
            let mut recall = BTreeMap::new();
            for &k in &cutoffs {
                recall.insert(k, num(o, &format!("R@{k}"))?);
            }
            per_query.insert(
                q.clone(),
                QueryMetrics {
                    recall,
                    ap: num(o, "AP")?,
                    rp: num(o, "RP")?,
                },
            );
        }
        Ok(MetricReport {
            num_queries: per_query.len(),
            cutoffs,
            macro_recall,
            map: num(mac, "mAP")?,
            mrp: num(mac, "mRP")?,
            per_query,
            missing,
        })
    }

    pub fn to_table(&self) -> String {
        let vals = self.macro_values();
        let header: Vec<String> = vals.iter().map(|(k, _)| format!("{k:>8}")).collect();
        let row: Vec<String> = vals.iter().map(|(_, v)| format!("{:>8.2}", 100.0 * v)).collect();
        format!(
            "queries: {}\n{}\n{}\n",
            self.num_queries,
            header.join(" "),
            row.join(" ")
        )
    }
}

/// Per-query metrics followed by macro averages over every judged query.
pub fn evaluate_run(runs: &[RankedList], qrels: &Qrels, cutoffs: &[usize]) -> Result<MetricReport> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(invalid("cutoffs must be non-empty and positive"));
    }
    let mut cutoffs = cutoffs.to_vec();
    cutoffs.sort_unstable();
    cutoffs.dedup();

    let by_query: BTreeMap<&str, &RankedList> = runs.iter().map(|r| (r.query_id.as_str(), r)).collect();
    for q in by_query.keys() {
        if !qrels.contains_key(*q) {
            return Err(invalid(format!("run query {q:?} has no judgments")));
        }
    }
    let mut per_query = BTreeMap::new();
    let mut missing = Vec::new();
    for (q, rel) in qrels {
        if rel.is_empty() {
            continue;
        }
        let relevant: HashSet<String> = rel.iter().cloned().collect();
        let empty;
        let ranked = match by_query.get(q.as_str()) {
            Some(r) if !r.is_empty() => *r,
            _ => {
                missing.push(q.clone());
                empty = RankedList {
                    query_id: q.clone(),
                    entries: Vec::new(),
                };
                &empty
            }
        };
        let mut recall = BTreeMap::new();
        for &k in &cutoffs {
            recall.insert(k, recall_at_k(ranked, &relevant, k)?);
        }
        per_query.insert(
            q.clone(),
            QueryMetrics {
                recall,
                ap: average_precision(ranked, &relevant)?,
                rp: r_precision(ranked, &relevant)?,
            },
        );
    }
    if per_query.is_empty() {
        return Err(invalid("no judged queries to evaluate"));
    }
    let n = per_query.len() as f64;
    let mean = |f: &dyn Fn(&QueryMetrics) -> f64| per_query.values().map(f).sum::<f64>() / n;
    let macro_recall = cutoffs.iter().map(|&k| (k, mean(&|m| m.recall[&k]))).collect();
    Ok(MetricReport {
        num_queries: per_query.len(),
        macro_recall,
        map: mean(&|m| m.ap),
        mrp: mean(&|m| m.rp),
        cutoffs,
        missing,
        per_query,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub systems: Vec<String>,
    pub metrics: Vec<String>,
    /// `values[s][m]`.
    pub values: Vec<Vec<f64>>,
}

impl Comparison {
    /// Difference of system `s` against the first (baseline) system.
    pub fn delta(&self, s: usize, m: usize) -> f64 {
        self.values[s][m] - self.values[0][m]
    }

    pub fn metric_index(&self, name: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m == name)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("system");
        for m in &self.metrics {
            s.push_str(&format!("\t{m}\tΔ{m}"));
        }
        s.push('\n');
        for (i, name) in self.systems.iter().enumerate() {
            s.push_str(name);
            for m in 0..self.metrics.len() {
                s.push_str(&format!("\t{:.4}\t{:+.4}", self.values[i][m], self.delta(i, m)));
            }
            s.push('\n');
        }
        s
    }
}

/// Side-by-side macro metrics; every report must cover the same queries.
pub fn compare_systems(reports: &[(&str, &MetricReport)]) -> Result<Comparison> {
    let (_, first) = reports.first().ok_or_else(|| invalid("nothing to compare"))?;
    let queries: BTreeSet<&String> = first.per_query.keys().collect();
    for (name, r) in &reports[1..] {
        if r.per_query.keys().collect::<BTreeSet<_>>() != queries {
            return Err(invalid(format!("system {name:?} was evaluated on a different query set")));
        }
        if r.cutoffs != first.cutoffs {
            return Err(invalid(format!("system {name:?} uses different cutoffs")));
        }
    }
    let metrics = first.macro_values().into_iter().map(|(k, _)| k).collect();
    Ok(Comparison {
        systems: reports.iter().map(|(n, _)| n.to_string()).collect(),
        metrics,
        values: reports
            .iter()
            .map(|(_, r)| r.macro_values().into_iter().map(|(_, v)| v).collect())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qrels(pairs: &[(&str, &[&str])]) -> Qrels {
        pairs
            .iter()
            .map(|(q, r)| (q.to_string(), r.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    fn run(q: &str, ids: &[&str]) -> RankedList {
        RankedList::from_scores(
            q,
            ids.iter().enumerate().map(|(i, id)| (id.to_string(), 1.0 / (i + 1) as f64)),
            ids.len(),
        )
    }

    #[test]
    fn perfect_single_query() {
        let r = evaluate_run(&[run("q", &["a", "b"])], &qrels(&[("q", &["a", "b"])]), &[100, 200, 500]).unwrap();
        assert!(r.macro_values().iter().all(|(_, v)| *v == 1.0));
    }

    #[test]
    fn macro_is_mean() {
        let r = evaluate_run(
            &[run("q1", &["a"]), run("q2", &["x"])],
            &qrels(&[("q1", &["a"]), ("q2", &["b"])]),
            &[10],
        )
        .unwrap();
        assert_eq!(r.recall(10), Some(0.5));
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn missing_query_counts_as_zero() {
        let r = evaluate_run(&[run("q1", &["a"])], &qrels(&[("q1", &["a"]), ("q2", &["b"])]), &[10]).unwrap();
        assert_eq!(r.missing, ["q2"]);
        assert_eq!(r.per_query["q2"].ap, 0.0);
        assert_eq!(r.num_queries, 2);
    }

    #[test]
    fn unjudged_run_query_rejected() {
        assert!(evaluate_run(&[run("q9", &["a"])], &qrels(&[("q1", &["a"])]), &[10]).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let r = evaluate_run(&[run("q1", &["a", "c", "b"])], &qrels(&[("q1", &["a", "b"])]), &[1, 2]).unwrap();
        let back = MetricReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn compare_against_self_and_mismatch() {
        let a = evaluate_run(&[run("q1", &["a"])], &qrels(&[("q1", &["a"])]), &[10]).unwrap();
        let c = compare_systems(&[("x", &a), ("y", &a)]).unwrap();
        assert!((0..c.metrics.len()).all(|m| c.delta(1, m) == 0.0));
        let b = evaluate_run(&[run("q2", &["a"])], &qrels(&[("q2", &["a"])]), &[10]).unwrap();
        assert!(compare_systems(&[("x", &a), ("z", &b)]).is_err());
    }
}
