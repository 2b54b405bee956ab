use crate::encoder::{BiEncoder, EmbeddingMatrix};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

use super::{LegislativeGraph, NodeKind};

/// Where initial node features come from.
#[derive(Clone, Copy)]
pub enum FeatureSource<'a> {
    /// Articles from their body, sections from their heading, both through
    /// the article encoder.
    Encoder(&'a BiEncoder),
    /// Every node looked up by source id.
    Imported(&'a EmbeddingMatrix),
    /// Articles looked up by id, sections encoded from their heading.
    Mixed {
        articles: &'a EmbeddingMatrix,
        encoder: &'a BiEncoder,
    },
}

/// Node feature matrix aligned with graph node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub matrix: Tensor,
}

impl NodeFeatures {
    pub fn new(matrix: Tensor, graph: &LegislativeGraph) -> Result<Self> {
        if matrix.dims2()?.0 != graph.len() {
            return Err(Error::Shape(format!("{} feature rows for {} nodes", matrix.rows(), graph.len())));
        }
        if let Some(v) = (0..matrix.rows()).find(|&i| matrix.row(i).iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite(format!("feature row of node {:?}", graph.node(v).source_id)));
        }
        Ok(NodeFeatures { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

pub fn init_node_features(graph: &LegislativeGraph, source: FeatureSource<'_>) -> Result<NodeFeatures> {
    let n = graph.len();
    let lookup = |m: &EmbeddingMatrix, v: usize| -> Result<Vec<f64>> {
        let id = &graph.node(v).source_id;
        m.get(id)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| invalid(format!("no imported embedding for node {id:?}")))
    };
    let rows: Vec<Vec<f64>> = match source {
        FeatureSource::Imported(m) => (0..n).map(|v| lookup(m, v)).collect::<Result<_>>()?,
        FeatureSource::Encoder(enc) => encode_rows(graph, enc, |_| true),
        FeatureSource::Mixed { articles, encoder } => {
            let mut rows = encode_rows(graph, encoder, |k| k == NodeKind::Section);
            for v in 0..n {
                if graph.node(v).kind == NodeKind::Article {
                    rows[v] = lookup(articles, v)?;
                }
            }
            rows
        }
    };
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("node feature rows differ in dimension".into()));
    }
    NodeFeatures::new(Tensor::matrix(n, d, rows.concat()), graph)
}

fn encode_rows(graph: &LegislativeGraph, enc: &BiEncoder, which: impl Fn(NodeKind) -> bool) -> Vec<Vec<f64>> {
    let picked: Vec<usize> = (0..graph.len()).filter(|&v| which(graph.node(v).kind)).collect();
    let texts: Vec<&str> = picked.iter().map(|&v| graph.node(v).text.as_str()).collect();
    let encoded = enc.encode_articles(&texts);
    let mut rows = vec![Vec::new(); graph.len()];
    for (i, &v) in picked.iter().enumerate() {
        rows[v] = encoded.row(i).to_vec();
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ArticleRecord, Corpus};
    use crate::encoder::EncoderConfig;

    fn graph() -> LegislativeGraph {
        let arts = ["a", "b", "c"]
            .iter()
            .zip([["Code", "Titre I"], ["Code", "Titre II"], ["Autre", "Titre I"]])
            .map(|(id, p)| ArticleRecord {
                id: id.to_string(),
                text: format!("article {id} sur le bail"),
                heading_path: p.iter().map(|s| s.to_string()).collect(),
            })
            .collect();
        LegislativeGraph::from_corpus(&Corpus::from_articles(arts).unwrap())
    }

    fn encoder() -> BiEncoder {
        BiEncoder::new(
            EncoderConfig {
                dim: 8,
                hash_buckets: 101,
                ..Default::default()
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn identical_headings_identical_rows() {
        let g = graph();
        let f = init_node_features(&g, FeatureSource::Encoder(&encoder())).unwrap();
        let t1 = g.node_by_source("Code > Titre I").unwrap();
        let t2 = g.node_by_source("Autre > Titre I").unwrap();
        assert_eq!(f.matrix.row(t1), f.matrix.row(t2));
    }

    #[test]
    fn import_and_mixed_paths() {
        let g = graph();
        let ids: Vec<String> = g.nodes().iter().map(|n| n.source_id.clone()).collect();
        let m = Tensor::from_fn(&[ids.len(), 8], |k| k as f64 * 0.1);
        let emb = EmbeddingMatrix::new(ids.clone(), m.clone()).unwrap();
        let f = init_node_features(&g, FeatureSource::Imported(&emb)).unwrap();
        assert_eq!(f.matrix, m);

        let arts: Vec<String> = g.article_nodes().iter().map(|&v| g.node(v).source_id.clone()).collect();
        let am = EmbeddingMatrix::new(arts, Tensor::full(&[3, 8], 0.5)).unwrap();
        let enc = encoder();
        let f = init_node_features(
            &g,
            FeatureSource::Mixed {
                articles: &am,
                encoder: &enc,
            },
        )
        .unwrap();
        assert!(f.matrix.is_finite());
        assert_eq!(f.matrix.row(g.node_by_source("a").unwrap()), [0.5; 8]);

        let partial = EmbeddingMatrix::new(vec!["a".into()], Tensor::zeros(&[1, 8])).unwrap();
        assert!(init_node_features(&g, FeatureSource::Imported(&partial)).is_err());
    }
}
