//! Graph-augmented dense statute retrieval at desk scale.
//!
//! The pipeline: a legislative corpus and its heading tree ([`corpus`]), a
//! BM25 baseline ([`lexical`]), a hierarchical bi-encoder trained with a
//! contrastive objective ([`encoder`], [`training`]), a graph neural network
//! that enriches frozen article embeddings over the heading tree ([`graph`]),
//! and exact dense retrieval plus rank-based evaluation ([`eval`]).

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod graph;
pub mod lexical;
pub mod tensor;
pub mod training;

pub use corpus::{ArticleRecord, Corpus, DatasetSplit, LegislativeTree, QueryRecord, Split};
pub use encoder::{BiEncoder, EmbeddingMatrix, EncoderConfig, SimilarityKind};
pub use error::{Error, Result};
pub use eval::{DenseIndex, MetricReport, RankedList};
pub use graph::{GnnArch, GnnConfig, LegislativeGraph};
pub use lexical::{Bm25Index, Bm25Params, TokenPipeline};
pub use training::{LossConfig, TrainRunConfig};
