//! Deterministic synthetic data for tests, benches and the end-to-end run.
//!
//! The statute fixture is a small heading tree (code, title, chapter,
//! article) over pseudo-words. Each chapter has topic words that appear in
//! its heading but only sparsely in its articles, so a query phrased with
//! topic words is best answered by knowing which chapter an article sits in.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ArticleRecord, QueryRecord, Split};
use crate::lexical::{Bm25Index, Bm25Params, DevQuery};

const SYLLABLES: [&str; 24] = [
    "ba", "ce", "di", "fo", "gu", "la", "me", "ni", "po", "ru", "sa", "te", "vi", "zo", "cha", "lou", "mar", "pen",
    "ros", "tin", "ver", "bel", "dro", "gan",
];

const LEGAL_FILLER: [&str; 24] = [
    "le", "la", "les", "de", "du", "des", "est", "sont", "par", "pour", "dans", "sur", "article", "disposition",
    "présent", "lorsque", "conformément", "prévu", "cas", "être", "peut", "doit", "autre", "ainsi",
];

const QUESTION_FILLER: [&str; 16] = [
    "est", "ce", "que", "je", "peux", "mon", "ma", "quels", "sont", "mes", "droits", "comment", "faire", "dois",
    "quand", "le",
];

const ROMAN: [&str; 8] = ["I", "II", "III", "IV", "V", "VI", "VII", "VIII"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub codes: usize,
    pub titles_per_code: usize,
    pub chapters_per_title: usize,
    pub articles_per_chapter: usize,
    pub topic_words: usize,
    /// Topic words drawn into each query.
    pub query_topics: usize,
    pub title_words: usize,
    pub specific_words: usize,
    /// Probability that an article mentions a given topic word of its chapter.
    pub topic_mention: f64,
    /// Probability that a query mentions a specific word of a relevant article.
    pub specific_mention: f64,
    pub article_filler: usize,
    /// Chapters that receive a second, held-out query.
    pub dev_chapters: usize,
    pub relevant_per_query: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            codes: 2,
            titles_per_code: 4,
            chapters_per_title: 5,
            articles_per_chapter: 5,
            topic_words: 4,
            query_topics: 4,
            title_words: 3,
            specific_words: 4,
            topic_mention: 0.15,
            specific_mention: 0.8,
            article_filler: 8,
            dev_chapters: 20,
            relevant_per_query: 2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub articles: Vec<ArticleRecord>,
    pub queries: Vec<QueryRecord>,
}

struct WordSource {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl WordSource {
    fn word(&mut self) -> String {
        loop {
            let n = self.rng.gen_range(2..=3);
            let w: String = (0..n).map(|_| *SYLLABLES.choose(&mut self.rng).unwrap()).collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.word()).collect()
    }
}

struct Chapter {
    topics: Vec<String>,
    title_topics: Vec<String>,
    articles: Vec<(String, Vec<String>)>,
}

/// Articles and queries for the end-to-end experiment.
pub fn statute_fixture(cfg: &FixtureConfig) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut words = WordSource {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed),
        used: LEGAL_FILLER.iter().chain(&QUESTION_FILLER).map(|s| s.to_string()).collect(),
    };
    let mut chapters = Vec::new();
    let mut articles = Vec::new();
    for c in 0..cfg.codes {
        let code = format!("Code {}", words.word());
        let prefix: String = ((b'A' + c as u8) as char).to_string();
        let mut number = 0;
        for t in 0..cfg.titles_per_code {
            let title_topics = words.words(cfg.title_words);
            let title = format!("Titre {} {}", ROMAN[t % ROMAN.len()], title_topics.join(" "));
            for h in 0..cfg.chapters_per_title {
                let topics = words.words(cfg.topic_words);
                let chapter = format!("Chapitre {} {}", h + 1, topics.join(" "));
                let path = vec![code.clone(), title.clone(), chapter];
                let mut members = Vec::new();
                for _ in 0..cfg.articles_per_chapter {
                    number += 1;
                    let id = format!("{prefix}{number}");
                    let specific = words.words(cfg.specific_words);
                    let mut body: Vec<&str> = Vec::new();
                    for w in &specific {
                        body.push(w);
                        body.push(w);
                    }
                    for w in &topics {
                        if rng.gen_bool(cfg.topic_mention) {
                            body.push(w);
                        }
                    }
                    for _ in 0..cfg.article_filler {
                        body.push(LEGAL_FILLER.choose(&mut rng).unwrap());
                    }
                    body.shuffle(&mut rng);
                    let text = format!("Art. {number}. {}.", body.join(" "));
                    articles.push(ArticleRecord {
                        id: id.clone(),
                        text,
                        heading_path: path.clone(),
                    });
                    members.push((id, specific));
                }
                chapters.push(Chapter {
                    topics,
                    title_topics: title_topics.clone(),
                    articles: members,
                });
            }
        }
    }

    let mut order: Vec<usize> = (0..chapters.len()).collect();
    order.shuffle(&mut rng);
    let dev_chapters: BTreeSet<usize> = order.iter().take(cfg.dev_chapters).copied().collect();
    let mut queries = Vec::new();
    for (ci, ch) in chapters.iter().enumerate() {
        let mut members: Vec<usize> = (0..ch.articles.len()).collect();
        members.shuffle(&mut rng);
        let k = cfg.relevant_per_query.min(members.len());
        let dev = dev_chapters.contains(&ci);
        let mut groups = Vec::new();
        for (i, chunk) in members.chunks_exact(k.max(1)).take(2).enumerate() {
            let split = match (i, dev) {
                (0, _) => Split::Train,
                (_, true) => Split::Dev,
                _ => continue,
            };
            groups.push((split, chunk.to_vec()));
        }
        for (split, group) in groups {
            let text = query_text(&mut rng, ch, &group, cfg);
            queries.push(QueryRecord {
                id: String::new(),
                text,
                relevant_ids: group.iter().map(|&m| ch.articles[m].0.clone()).collect(),
                split,
            });
        }
    }
    queries.shuffle(&mut rng);
    for (i, q) in queries.iter_mut().enumerate() {
        q.id = format!("q{:03}", i + 1);
    }
    Fixture { articles, queries }
}

fn query_text(rng: &mut ChaCha8Rng, ch: &Chapter, group: &[usize], cfg: &FixtureConfig) -> String {
    let mut parts: Vec<&str> = Vec::new();
    let mut topics: Vec<&String> = ch.topics.iter().collect();
    topics.shuffle(rng);
    parts.extend(topics.iter().take(cfg.query_topics).map(|s| s.as_str()));
    if rng.gen_bool(0.5) {
        parts.push(ch.title_topics.choose(rng).unwrap());
    }
    for &m in group {
        if rng.gen_bool(cfg.specific_mention) {
            parts.push(ch.articles[m].1.choose(rng).unwrap());
        }
    }
    for _ in 0..4 {
        parts.push(QUESTION_FILLER.choose(rng).unwrap());
    }
    parts.shuffle(rng);
    let mut s = parts.join(" ");
    s.push('?');
    s
}

/// A BM25 tuning set where relevant documents are long: they repeat the
/// query term amid extra filler, while short distractors mention it once.
/// Length normalization therefore hurts, and the best `b` is small. Ids sort
/// distractors first, so ties never favor the relevant documents.
pub fn long_relevant_bm25_fixture() -> (Bm25Index, Vec<DevQuery>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut words = WordSource {
        rng: ChaCha8Rng::seed_from_u64(12),
        used: HashSet::new(),
    };
    let filler = words.words(30);
    let mut docs: Vec<(String, Vec<String>)> = Vec::new();
    let mut dev = Vec::new();
    for q in 0..12 {
        let term = words.word();
        let mut relevant = HashSet::new();
        for r in 0..2 {
            let id = format!("d{q}_{}", r + 3);
            let mut toks = vec![term.clone(); 3];
            toks.extend((0..60).map(|_| filler.choose(&mut rng).unwrap().clone()));
            toks.shuffle(&mut rng);
            docs.push((id.clone(), toks));
            relevant.insert(id);
        }
        for s in 0..3 {
            let mut toks = vec![term.clone()];
            toks.extend((0..3).map(|_| filler.choose(&mut rng).unwrap().clone()));
            toks.shuffle(&mut rng);
            docs.push((format!("d{q}_{s}"), toks));
        }
        dev.push(DevQuery {
            id: format!("q{q}"),
            tokens: vec![term],
            relevant,
        });
    }
    let index = Bm25Index::build(docs, Bm25Params::default()).expect("unique ids");
    (index, dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{validate_queries, Corpus};

    #[test]
    fn shape_of_default_fixture() {
        let f = statute_fixture(&FixtureConfig::default());
        assert_eq!(f.articles.len(), 200);
        assert_eq!(f.queries.len(), 60);
        let corpus = Corpus::from_articles(f.articles.clone()).unwrap();
        let split = validate_queries(&f.queries, &corpus).unwrap();
        assert_eq!(split.sizes(), [40, 20, 0]);
        assert_eq!(corpus.tree.roots.len(), 2);
        assert_eq!(corpus.tree.len(), 2 + 8 + 40 + 200);
    }

    #[test]
    fn deterministic() {
        assert_eq!(statute_fixture(&FixtureConfig::default()), statute_fixture(&FixtureConfig::default()));
    }

    #[test]
    fn relevant_articles_share_a_chapter() {
        let f = statute_fixture(&FixtureConfig::default());
        let corpus = Corpus::from_articles(f.articles).unwrap();
        for q in &f.queries {
            let paths: BTreeSet<&Vec<String>> = q.relevant_ids.iter().map(|r| &corpus.get(r).unwrap().heading_path).collect();
            assert_eq!(paths.len(), 1);
        }
    }
}
