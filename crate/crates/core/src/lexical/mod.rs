//! Lexical retrieval: tokenization, BM25 and TF-IDF.

mod bm25;
mod tfidf;
mod tokenize;

pub use bm25::{
    bm25_score, bm25_topk, tune_bm25_grid, Bm25Index, Bm25Params, DevQuery, GridCell, GridSearch, Posting,
};
pub use tfidf::{neighbor_similarity_matrix, SimilarityMatrix, TfIdfModel};
pub use tokenize::{light_stem, tokenize, TokenPipeline};
