//! Statute corpus: articles, their heading hierarchy, and question data.
//!
//! Articles are read from JSON Lines (`{"id", "text", "path"}`) and merged into
//! a [`LegislativeTree`] keyed by full heading-path prefix, so two "Chapter I"
//! headings under different parents stay distinct nodes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub id: String,
    pub text: String,
    #[serde(rename = "path")]
    pub heading_path: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    #[serde(rename = "relevant")]
    pub relevant_ids: BTreeSet<String>,
    pub split: Split,
}

/// Named train/dev/test partitions of query ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.dev.len(), self.test.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeNodeKind {
    Section { heading: String, depth: usize },
    Article { article: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub kind: TreeNodeKind,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// The heading hierarchy of the corpus. Node indices are creation order;
/// section nodes are created on first appearance of their path prefix.
#[derive(Debug, Clone, Default)]
pub struct LegislativeTree {
    pub nodes: Vec<TreeNode>,
    pub roots: Vec<usize>,
    node_paths: Vec<Vec<String>>,
    section_index: HashMap<Vec<String>, usize>,
    article_nodes: Vec<usize>,
}

impl LegislativeTree {
    pub fn build(articles: &[ArticleRecord]) -> Result<Self> {
        let mut tree = LegislativeTree::default();
        for (i, a) in articles.iter().enumerate() {
            if a.heading_path.is_empty() {
                return Err(invalid(format!("article {:?} has an empty heading path", a.id)));
            }
            let mut parent: Option<usize> = None;
            for depth in 0..a.heading_path.len() {
                let prefix = &a.heading_path[..=depth];
                let node = match tree.section_index.get(prefix) {
                    Some(&n) => n,
                    None => {
                        let n = tree.nodes.len();
                        tree.nodes.push(TreeNode {
                            kind: TreeNodeKind::Section {
                                heading: prefix[depth].clone(),
                                depth,
                            },
                            parent,
                            children: Vec::new(),
                        });
                        tree.node_paths.push(prefix.to_vec());
                        tree.section_index.insert(prefix.to_vec(), n);
                        match parent {
                            Some(p) => tree.nodes[p].children.push(n),
                            None => tree.roots.push(n),
                        }
                        n
                    }
                };
                parent = Some(node);
            }
            let p = parent.expect("non-empty path");
            let n = tree.nodes.len();
            tree.nodes.push(TreeNode {
                kind: TreeNodeKind::Article { article: i },
                parent: Some(p),
                children: Vec::new(),
            });
            tree.nodes[p].children.push(n);
            tree.node_paths.push(Vec::new());
            tree.article_nodes.push(n);
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.parent.is_some()).count()
    }

    /// Tree node holding the article at `article_index` in the corpus order.
    pub fn article_node(&self, article_index: usize) -> usize {
        self.article_nodes[article_index]
    }

    pub fn section_node(&self, path: &[String]) -> Option<usize> {
        self.section_index.get(path).copied()
    }

    /// Full heading path of a section node, `None` for article nodes.
    pub fn section_path(&self, node: usize) -> Option<&[String]> {
        match self.nodes[node].kind {
            TreeNodeKind::Section { .. } => Some(&self.node_paths[node]),
            TreeNodeKind::Article { .. } => None,
        }
    }

    pub fn root_heading(&self, root: usize) -> &str {
        match &self.nodes[root].kind {
            TreeNodeKind::Section { heading, .. } => heading,
            TreeNodeKind::Article { .. } => unreachable!("roots are sections"),
        }
    }

    pub fn find_root(&self, code: &str) -> Option<usize> {
        self.roots.iter().copied().find(|&r| self.root_heading(r) == code)
    }

    /// Article indices under `node`, depth-first in sibling order.
    pub fn leaves_under(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            match self.nodes[n].kind {
                TreeNodeKind::Article { article } => out.push(article),
                TreeNodeKind::Section { .. } => {
                    stack.extend(self.nodes[n].children.iter().rev().copied());
                }
            }
        }
        out
    }
}

/// A loaded, validated corpus. Immutable after loading.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub articles: Vec<ArticleRecord>,
    pub tree: LegislativeTree,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_articles(articles: Vec<ArticleRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(articles.len());
        for (i, a) in articles.iter().enumerate() {
            validate_article(a, i + 1)?;
            if index.insert(a.id.clone(), i).is_some() {
                return Err(Error::DuplicateArticle {
                    id: a.id.clone(),
                    line: i + 1,
                });
            }
        }
        let tree = LegislativeTree::build(&articles)?;
        Ok(Corpus {
            articles,
            tree,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&ArticleRecord> {
        self.position(id).map(|i| &self.articles[i])
    }

    /// Number of articles under each root heading, in root order.
    pub fn counts_per_code(&self) -> BTreeMap<String, usize> {
        self.tree
            .roots
            .iter()
            .map(|&r| (self.tree.root_heading(r).to_string(), self.tree.leaves_under(r).len()))
            .collect()
    }
}

fn validate_article(a: &ArticleRecord, line: usize) -> Result<()> {
    let bad = |msg: &str| Error::Parse {
        path: Default::default(),
        line,
        msg: format!("article {:?}: {msg}", a.id),
    };
    if a.id.is_empty() {
        return Err(bad("empty id"));
    }
    if a.text.is_empty() {
        return Err(bad("empty text"));
    }
    if a.heading_path.is_empty() {
        return Err(bad("empty heading path"));
    }
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let records = read_jsonl::<ArticleRecord>(path)?;
    let mut seen = HashMap::new();
    for (line, a) in &records {
        validate_article(a, *line).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            },
            other => other,
        })?;
        if seen.insert(a.id.clone(), *line).is_some() {
            return Err(Error::DuplicateArticle {
                id: a.id.clone(),
                line: *line,
            });
        }
    }
    Corpus::from_articles(records.into_iter().map(|(_, a)| a).collect())
}

/// Writes articles back out in the canonical JSONL form read by [`load_corpus`].
pub fn write_corpus<W: Write>(articles: &[ArticleRecord], mut out: W) -> Result<()> {
    for a in articles {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_queries<W: Write>(queries: &[QueryRecord], mut out: W) -> Result<()> {
    for q in queries {
        serde_json::to_writer(&mut out, q)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn validate_queries(queries: &[QueryRecord], corpus: &Corpus) -> Result<DatasetSplit> {
    let mut split = DatasetSplit::default();
    let mut ids = BTreeSet::new();
    for q in queries {
        if q.id.is_empty() {
            return Err(invalid("query with empty id"));
        }
        if !ids.insert(q.id.as_str()) {
            return Err(invalid(format!("duplicate query id {:?}", q.id)));
        }
        if q.relevant_ids.is_empty() {
            return Err(invalid(format!("query {:?} has an empty relevant set", q.id)));
        }
        for r in &q.relevant_ids {
            if corpus.position(r).is_none() {
                return Err(Error::UnknownArticle {
                    query: q.id.clone(),
                    article: r.clone(),
                });
            }
        }
        match q.split {
            Split::Train => split.train.push(q.id.clone()),
            Split::Dev => split.dev.push(q.id.clone()),
            Split::Test => split.test.push(q.id.clone()),
        }
    }
    Ok(split)
}

pub fn load_queries(path: &Path, corpus: &Corpus) -> Result<(Vec<QueryRecord>, DatasetSplit)> {
    let records = read_jsonl::<QueryRecord>(path)?;
    let queries: Vec<QueryRecord> = records.into_iter().map(|(_, q)| q).collect();
    let split = validate_queries(&queries, corpus)?;
    Ok((queries, split))
}

/// `count` consecutive articles of a code, starting at leaf `start` in
/// depth-first sibling order.
pub fn consecutive_articles<'c>(
    corpus: &'c Corpus,
    code: &str,
    start: usize,
    count: usize,
) -> Result<Vec<&'c ArticleRecord>> {
    let root = corpus
        .tree
        .find_root(code)
        .ok_or_else(|| invalid(format!("unknown code {code:?}")))?;
    let leaves = corpus.tree.leaves_under(root);
    let end = start
        .checked_add(count)
        .filter(|&e| e <= leaves.len())
        .ok_or_else(|| {
            invalid(format!(
                "range {start}..{start}+{count} out of bounds for {} articles in {code:?}",
                leaves.len()
            ))
        })?;
    Ok(leaves[start..end].iter().map(|&i| &corpus.articles[i]).collect())
}
