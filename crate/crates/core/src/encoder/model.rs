//! A toy bi-encoder with a hierarchical article side.
//!
//! Queries and passages share one hashed embedding table. A passage vector is
//! the mean of its hashed unigram/bigram embeddings, projected by a
//! side-specific matrix. Articles are chunked into passages, each passage
//! vector gets a learned position embedding added, a small pre-norm
//! transformer layer mixes passages, and the result is pooled.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lexical::TokenPipeline;
use crate::tensor::{glorot, uniform, NodeId, ParamId, ParamStore, Tape, Tensor};

use super::SimilarityKind;

/// Padding token; masked out of passage means.
pub const PAD_TOKEN: &str = "[pad]";
const EMPTY_FEATURE: &str = "\u{0}empty";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub max_chunk_len: usize,
    pub max_doc_len: usize,
    pub pooling: Pooling,
    pub hash_buckets: usize,
    pub bigrams: bool,
    pub heads: usize,
    pub layers: usize,
    pub ff_mult: usize,
    pub similarity: SimilarityKind,
    /// Zero the output projections of the context layers so each starts as
    /// the identity map.
    pub identity_context: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 64,
            max_chunk_len: 128,
            max_doc_len: 1024,
            pooling: Pooling::Max,
            hash_buckets: 1 << 14,
            bigrams: true,
            heads: 2,
            layers: 1,
            ff_mult: 2,
            similarity: SimilarityKind::Cosine,
            identity_context: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("embedding dim must be positive"));
        }
        if self.max_chunk_len == 0 || self.max_doc_len % self.max_chunk_len != 0 {
            return Err(invalid(format!(
                "max document length {} must be a positive multiple of chunk length {}",
                self.max_doc_len, self.max_chunk_len
            )));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(invalid(format!("dim {} not divisible into {} heads", self.dim, self.heads)));
        }
        if self.hash_buckets == 0 || self.ff_mult == 0 {
            return Err(invalid("hash buckets and feed-forward width must be positive"));
        }
        Ok(())
    }

    pub fn max_passages(&self) -> usize {
        self.max_doc_len / self.max_chunk_len
    }
}

/// Greedy fixed-length chunking after truncation to the document limit.
/// Always returns at least one (possibly empty) passage.
pub fn chunk_article(tokens: &[String], config: &EncoderConfig) -> Vec<Vec<String>> {
    let kept = &tokens[..tokens.len().min(config.max_doc_len)];
    if kept.is_empty() {
        return vec![Vec::new()];
    }
    kept.chunks(config.max_chunk_len).map(<[String]>::to_vec).collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
struct ContextLayerIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ff1: ParamId,
    ff1_b: ParamId,
    ff2: ParamId,
    ff2_b: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderIds {
    table: ParamId,
    query_proj: ParamId,
    passage_proj: ParamId,
    positions: ParamId,
    context: Vec<ContextLayerIds>,
}

/// Query encoder and hierarchical article encoder with their parameters.
#[derive(Debug, Clone)]
pub struct BiEncoder {
    pub config: EncoderConfig,
    pub store: ParamStore,
    pub tokenizer: TokenPipeline,
    ids: EncoderIds,
}

impl BiEncoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let mut store = ParamStore::new();
        let table = store.add("embed.table", uniform(&mut rng, &[config.hash_buckets, d], 1.0));
        let query_proj = store.add("query.proj", Tensor::identity(d));
        let passage_proj = store.add("passage.proj", Tensor::identity(d));
        let positions = store.add("article.positions", uniform(&mut rng, &[config.max_passages(), d], 0.02));
        let out_scale = if config.identity_context { 0.0 } else { 0.02 };
        let ff = d * config.ff_mult;
        let context = (0..config.layers)
            .map(|l| {
                let p = |n: &str| format!("context.{l}.{n}");
                ContextLayerIds {
                    wq: store.add(&p("wq"), glorot(&mut rng, d, d)),
                    wk: store.add(&p("wk"), glorot(&mut rng, d, d)),
                    wv: store.add(&p("wv"), glorot(&mut rng, d, d)),
                    wo: store.add(&p("wo"), uniform(&mut rng, &[d, d], out_scale)),
                    ff1: store.add(&p("ff1"), glorot(&mut rng, d, ff)),
                    ff1_b: store.add(&p("ff1_b"), Tensor::zeros(&[1, ff])),
                    ff2: store.add(&p("ff2"), uniform(&mut rng, &[ff, d], out_scale)),
                    ff2_b: store.add(&p("ff2_b"), Tensor::zeros(&[1, d])),
                }
            })
            .collect();
        Ok(BiEncoder {
            config,
            store,
            tokenizer: TokenPipeline {
                drop_numbers: false,
                ..Default::default()
            },
            ids: EncoderIds {
                table,
                query_proj,
                passage_proj,
                positions,
                context,
            },
        })
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.tokenizer.tokenize(text)
    }

    fn bucket(&self, feature: &str) -> usize {
        (fnv1a(feature.as_bytes()) % self.config.hash_buckets as u64) as usize
    }

    /// Hashed unigram (and bigram) feature buckets of a token sequence.
    /// Padding is dropped; a sequence with no real token maps to a reserved
    /// "empty" feature.
    pub fn featurize(&self, tokens: &[String]) -> Vec<usize> {
        let real: Vec<&str> = tokens.iter().map(String::as_str).filter(|t| *t != PAD_TOKEN).collect();
        if real.is_empty() {
            return vec![self.bucket(EMPTY_FEATURE)];
        }
        let mut out: Vec<usize> = real.iter().map(|t| self.bucket(t)).collect();
        if self.config.bigrams {
            for w in real.windows(2) {
                out.push(self.bucket(&format!("{}\u{1}{}", w[0], w[1])));
            }
        }
        out
    }

    /// Query embeddings `[n, d]`, L2-normalized under cosine similarity.
    pub fn query_forward<'p>(&'p self, tape: &mut Tape<'p>, tokens: &[Vec<String>]) -> NodeId {
        let bags: Vec<Vec<usize>> = tokens.iter().map(|t| self.featurize(t)).collect();
        let table = tape.param(&self.store, self.ids.table);
        let mean = tape.embedding_bag_mean(table, Rc::new(bags));
        let proj = tape.param(&self.store, self.ids.query_proj);
        let q = tape.matmul(mean, proj);
        if self.config.similarity == SimilarityKind::Cosine {
            tape.l2_normalize_rows(q)
        } else {
            q
        }
    }

    /// Article embeddings `[n, d]` from tokenized article bodies.
    pub fn article_forward<'p>(&'p self, tape: &mut Tape<'p>, tokens: &[Vec<String>]) -> NodeId {
        let chunked: Vec<Vec<Vec<String>>> = tokens.iter().map(|t| chunk_article(t, &self.config)).collect();
        let bags: Vec<Vec<usize>> = chunked.iter().flatten().map(|p| self.featurize(p)).collect();
        let table = tape.param(&self.store, self.ids.table);
        let mean = tape.embedding_bag_mean(table, Rc::new(bags));
        let proj = tape.param(&self.store, self.ids.passage_proj);
        let passages = tape.matmul(mean, proj);
        let positions = tape.param(&self.store, self.ids.positions);

        let mut pooled = Vec::with_capacity(chunked.len());
        let mut offset = 0;
        for chunks in &chunked {
            let m = chunks.len();
            let p = tape.slice_rows(passages, offset, m);
            offset += m;
            let pos = tape.slice_rows(positions, 0, m);
            let mut h = tape.add(p, pos);
            for layer in &self.ids.context {
                h = self.context_layer(tape, layer, h);
            }
            pooled.push(match self.config.pooling {
                Pooling::Mean => tape.mean_rows(h),
                Pooling::Max => tape.max_rows(h),
            });
        }
        tape.concat_rows(&pooled)
    }

    /// Pre-norm self-attention block followed by a GeLU feed-forward block,
    /// both residual.
    fn context_layer<'p>(&'p self, tape: &mut Tape<'p>, ids: &ContextLayerIds, x: NodeId) -> NodeId {
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let p = |tape: &mut Tape<'p>, id| tape.param(&self.store, id);

        let h = tape.layer_norm_rows(x, 1e-5);
        let (wq, wk, wv, wo) = (p(tape, ids.wq), p(tape, ids.wk), p(tape, ids.wv), p(tape, ids.wo));
        let q = tape.matmul(h, wq);
        let k = tape.matmul(h, wk);
        let v = tape.matmul(h, wv);
        let mut outs = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = tape.slice_cols(q, head * dh, dh);
            let kh = tape.slice_cols(k, head * dh, dh);
            let vh = tape.slice_cols(v, head * dh, dh);
            let kt = tape.transpose(kh);
            let logits = tape.matmul(qh, kt);
            let logits = tape.scale(logits, 1.0 / (dh as f64).sqrt());
            let att = tape.softmax_rows(logits);
            outs.push(tape.matmul(att, vh));
        }
        let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
        let attn = tape.matmul(cat, wo);
        let x = tape.add(x, attn);

        let h = tape.layer_norm_rows(x, 1e-5);
        let (ff1, ff1_b, ff2, ff2_b) = (p(tape, ids.ff1), p(tape, ids.ff1_b), p(tape, ids.ff2), p(tape, ids.ff2_b));
        let f = tape.matmul(h, ff1);
        let f = tape.add_row(f, ff1_b);
        let f = tape.gelu(f);
        let f = tape.matmul(f, ff2);
        let f = tape.add_row(f, ff2_b);
        tape.add(x, f)
    }

    pub fn encode_query(&self, text: &str) -> Vec<f64> {
        self.encode_query_tokens(&self.tokenize(text))
    }

    pub fn encode_query_tokens(&self, tokens: &[String]) -> Vec<f64> {
        let mut tape = Tape::new();
        let q = self.query_forward(&mut tape, &[tokens.to_vec()]);
        tape.value(q).data().to_vec()
    }

    pub fn encode_article(&self, text: &str) -> Vec<f64> {
        self.encode_article_tokens(&self.tokenize(text))
    }

    pub fn encode_article_tokens(&self, tokens: &[String]) -> Vec<f64> {
        let mut tape = Tape::new();
        let a = self.article_forward(&mut tape, &[tokens.to_vec()]);
        tape.value(a).data().to_vec()
    }

    /// Encodes many queries; parallel across texts, output in input order.
    pub fn encode_queries(&self, texts: &[&str]) -> Tensor {
        self.encode_parallel(texts, false)
    }

    pub fn encode_articles(&self, texts: &[&str]) -> Tensor {
        self.encode_parallel(texts, true)
    }

    fn encode_parallel(&self, texts: &[&str], articles: bool) -> Tensor {
        const CHUNK: usize = 32;
        let d = self.config.dim;
        let parts: Vec<Vec<f64>> = texts
            .par_chunks(CHUNK)
            .map(|chunk| {
                let toks: Vec<Vec<String>> = chunk.iter().map(|t| self.tokenize(t)).collect();
                let mut tape = Tape::new();
                let out = if articles {
                    self.article_forward(&mut tape, &toks)
                } else {
                    self.query_forward(&mut tape, &toks)
                };
                tape.value(out).data().to_vec()
            })
            .collect();
        Tensor::matrix(texts.len(), d, parts.concat())
    }

    pub fn param_table(&self) -> ParamId {
        self.ids.table
    }

    pub fn param_positions(&self) -> ParamId {
        self.ids.positions
    }

    pub fn param_query_proj(&self) -> ParamId {
        self.ids.query_proj
    }

    pub fn param_passage_proj(&self) -> ParamId {
        self.ids.passage_proj
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    fn small(identity: bool, pooling: Pooling) -> BiEncoder {
        BiEncoder::new(
            EncoderConfig {
                dim: 8,
                max_chunk_len: 4,
                max_doc_len: 16,
                hash_buckets: 97,
                heads: 2,
                pooling,
                identity_context: identity,
                ..Default::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn chunking() {
        let cfg = EncoderConfig::default();
        let sizes = |n| chunk_article(&toks(n), &cfg).iter().map(Vec::len).collect::<Vec<_>>();
        assert_eq!(sizes(300), [128, 128, 44]);
        assert_eq!(sizes(2000), [128; 8]);
        assert_eq!(sizes(128), [128]);
        assert_eq!(sizes(0), [0]);
    }

    #[test]
    fn config_validation() {
        let bad = EncoderConfig {
            max_doc_len: 1000,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(EncoderConfig {
            dim: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!(EncoderConfig::default().max_passages(), 8);
    }

    #[test]
    fn query_encoding_is_deterministic_and_unit() {
        let enc = small(false, Pooling::Max);
        let a = enc.encode_query("qui paie le mur mitoyen");
        assert_eq!(a, enc.encode_query("qui paie le mur mitoyen"));
        let n: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }

    #[test]
    fn one_token_query_is_projected_embedding() {
        let mut enc = small(false, Pooling::Max);
        let proj = crate::tensor::uniform(&mut ChaCha8Rng::seed_from_u64(1), &[8, 8], 1.0);
        enc.store.set("query.proj", proj.clone()).unwrap();
        let got = enc.encode_query("mur");
        let bucket = enc.featurize(&["mur".to_string()])[0];
        let row = Tensor::row_vector(enc.store.value(enc.param_table()).row(bucket).to_vec());
        let raw = row.matmul(&proj);
        let n = raw.norm();
        for (g, r) in got.iter().zip(raw.data()) {
            assert!((g - r / n).abs() < 1e-12);
        }
    }

    #[test]
    fn single_passage_identity_layer_passes_through() {
        let enc = small(true, Pooling::Max);
        let t: Vec<String> = ["mur", "mitoyen"].iter().map(|s| s.to_string()).collect();
        let got = enc.encode_article_tokens(&t);
        let bags = enc.featurize(&t);
        let table = enc.store.value(enc.param_table());
        let mut mean = vec![0.0; 8];
        for &b in &bags {
            for (m, v) in mean.iter_mut().zip(table.row(b)) {
                *m += v / bags.len() as f64;
            }
        }
        let p = Tensor::row_vector(mean).matmul(enc.store.value(enc.param_passage_proj()));
        let pos = enc.store.value(enc.param_positions()).row(0);
        for k in 0..8 {
            assert!((got[k] - (p.data()[k] + pos[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_passages_changes_output() {
        let enc = small(false, Pooling::Max);
        let a: Vec<String> = ["mur", "haie", "arbre", "fruit"].iter().map(|s| s.to_string()).collect();
        let b: Vec<String> = ["bail", "loyer", "garantie", "preavis"].iter().map(|s| s.to_string()).collect();
        let ab = enc.encode_article_tokens(&[a.clone(), b.clone()].concat());
        let ba = enc.encode_article_tokens(&[b, a].concat());
        assert_ne!(ab, ba);
    }

    #[test]
    fn trailing_padding_is_ignored() {
        let enc = small(false, Pooling::Max);
        let mut t: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let base = enc.encode_article_tokens(&t);
        t.extend([PAD_TOKEN.to_string(), PAD_TOKEN.to_string()]);
        assert_eq!(enc.encode_article_tokens(&t), base);
    }

    #[test]
    fn duplicated_passages_mean_pool_equals_single() {
        let mut enc = small(true, Pooling::Mean);
        enc.store.set("article.positions", Tensor::zeros(&[4, 8])).unwrap();
        let p: Vec<String> = ["mur", "haie", "arbre", "fruit"].iter().map(|s| s.to_string()).collect();
        let single = enc.encode_article_tokens(&p);
        let double = enc.encode_article_tokens(&[p.clone(), p].concat());
        for (a, b) in single.iter().zip(&double) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn short_article_equals_single_passage_path() {
        let enc = small(false, Pooling::Max);
        let t: Vec<String> = ["mur", "haie"].iter().map(|s| s.to_string()).collect();
        let mut tape = Tape::new();
        let out = enc.article_forward(&mut tape, &[t.clone()]);
        assert_eq!(tape.value(out).data(), enc.encode_article_tokens(&t).as_slice());
        assert_eq!(chunk_article(&t, &enc.config).len(), 1);
    }

    #[test]
    fn batch_encoding_matches_single() {
        let enc = small(false, Pooling::Max);
        let texts = ["mur mitoyen", "bail de location", "", "haie arbre fruit"];
        let all = enc.encode_articles(&texts);
        for (i, t) in texts.iter().enumerate() {
            let single = enc.encode_article(t);
            for (a, b) in all.row(i).iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
