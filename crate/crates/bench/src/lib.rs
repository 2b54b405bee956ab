//! Shared inputs for the pipeline benchmarks.

use gdsr_core::corpus::{Corpus, QueryRecord, Split};
use gdsr_core::fixture::{statute_fixture, FixtureConfig};
use gdsr_core::graph::{LegislativeGraph, MessageGraph};

pub struct BenchData {
    pub corpus: Corpus,
    pub queries: Vec<QueryRecord>,
    pub graph: LegislativeGraph,
    pub messages: MessageGraph,
}

impl BenchData {
    /// The statute fixture scaled by `factor` in chapters per title.
    pub fn new(factor: usize) -> Self {
        let cfg = FixtureConfig {
            chapters_per_title: 5 * factor.max(1),
            ..FixtureConfig::default()
        };
        let f = statute_fixture(&cfg);
        let corpus = Corpus::from_articles(f.articles).expect("fixture articles are valid");
        let graph = LegislativeGraph::from_corpus(&corpus);
        let messages = MessageGraph::new(&graph, true, true);
        BenchData {
            corpus,
            queries: f.queries,
            graph,
            messages,
        }
    }

    pub fn split(&self, split: Split) -> Vec<&QueryRecord> {
        self.queries.iter().filter(|q| q.split == split).collect()
    }

    pub fn article_texts(&self) -> Vec<&str> {
        self.corpus.articles.iter().map(|a| a.text.as_str()).collect()
    }
}
