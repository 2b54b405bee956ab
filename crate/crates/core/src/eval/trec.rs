//! TREC run and qrels files.
//!
//! Run lines are `qid Q0 article_id rank score tag`; qrels lines are
//! `qid 0 article_id relevance`, where any relevance above zero counts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::{RankedEntry, RankedList};

pub type Qrels = BTreeMap<String, BTreeSet<String>>;

fn fmt_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: Default::default(),
        line,
        msg: msg.into(),
    }
}

pub fn write_run<W: Write>(runs: &[RankedList], tag: &str, mut out: W) -> Result<()> {
    for r in runs {
        for e in &r.entries {
            writeln!(out, "{} Q0 {} {} {:.8} {}", r.query_id, e.article_id, e.rank, e.score, tag)?;
        }
    }
    Ok(())
}

/// Reads a run file. Queries keep their first-appearance order; entries
/// within a query are ordered by rank.
pub fn read_run<R: BufRead>(input: R) -> Result<Vec<RankedList>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_query: BTreeMap<String, Vec<RankedEntry>> = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(fmt_err(i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let rank: usize = f[3].parse().map_err(|_| fmt_err(i + 1, format!("bad rank {:?}", f[3])))?;
        let score: f64 = f[4].parse().map_err(|_| fmt_err(i + 1, format!("bad score {:?}", f[4])))?;
        let q = f[0].to_string();
        if !by_query.contains_key(&q) {
            order.push(q.clone());
        }
        by_query.entry(q).or_default().push(RankedEntry {
            article_id: f[2].to_string(),
            score,
            rank,
        });
    }
    Ok(order
        .into_iter()
        .map(|q| {
            let mut entries = by_query.remove(&q).unwrap_or_default();
            entries.sort_by_key(|e| e.rank);
            RankedList { query_id: q, entries }
        })
        .collect())
}

pub fn write_qrels<W: Write>(qrels: &Qrels, mut out: W) -> Result<()> {
    for (q, rel) in qrels {
        for a in rel {
            writeln!(out, "{q} 0 {a} 1")?;
        }
    }
    Ok(())
}

pub fn read_qrels<R: BufRead>(input: R) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(fmt_err(i + 1, format!("expected 4 fields, found {}", f.len())));
        }
        let rel: i64 = f[3].parse().map_err(|_| fmt_err(i + 1, format!("bad relevance {:?}", f[3])))?;
        let entry = qrels.entry(f[0].to_string()).or_default();
        if rel > 0 {
            entry.insert(f[2].to_string());
        }
    }
    Ok(qrels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_roundtrip_keeps_order() {
        let runs = vec![
            RankedList::from_scores("q2", [("a".into(), 0.5), ("b".into(), 0.25)], 10),
            RankedList::from_scores("q1", [("c".into(), 1.0)], 10),
        ];
        let mut buf = Vec::new();
        write_run(&runs, "dsr", &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "q2 Q0 a 1 0.50000000 dsr\nq2 Q0 b 2 0.25000000 dsr\nq1 Q0 c 1 1.00000000 dsr\n"
        );
        let back = read_run(buf.as_slice()).unwrap();
        assert_eq!(back, runs);
    }

    #[test]
    fn malformed_run_line() {
        assert!(read_run("q1 Q0 a 1\n".as_bytes()).is_err());
        assert!(read_run("q1 Q0 a x 0.1 t\n".as_bytes()).is_err());
    }

    #[test]
    fn qrels_zero_relevance_ignored() {
        let q = read_qrels("q1 0 a 1\nq1 0 b 0\nq2 0 c 2\n".as_bytes()).unwrap();
        assert_eq!(q["q1"].len(), 1);
        assert!(q["q2"].contains("c"));
    }
}
