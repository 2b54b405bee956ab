//! Hierarchical bi-encoder, similarity functions and embedding import.

mod embeddings;
mod model;
mod similarity;

pub use embeddings::{import_embeddings, EmbeddingMatrix, EMBEDDING_MAGIC};
pub use model::{chunk_article, BiEncoder, EncoderConfig, Pooling, PAD_TOKEN};
pub use similarity::{score_matrix, similarity, SimilarityKind};
