use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum SimilarityKind {
    Cosine = 0,
    Dot = 1,
    /// Negative Euclidean distance, so larger still means more similar.
    Euclidean = 2,
}

impl SimilarityKind {
    pub(crate) fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(SimilarityKind::Cosine),
            1 => Some(SimilarityKind::Dot),
            2 => Some(SimilarityKind::Euclidean),
            _ => None,
        }
    }
}

impl std::str::FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cos" | "cosine" => Ok(SimilarityKind::Cosine),
            "dot" | "dot-product" => Ok(SimilarityKind::Dot),
            "euclidean" | "l2" => Ok(SimilarityKind::Euclidean),
            other => Err(invalid(format!("unknown similarity {other:?}"))),
        }
    }
}

pub fn similarity(u: &[f64], v: &[f64], kind: SimilarityKind) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("similarity of dims {} and {}", u.len(), v.len())));
    }
    let dot = || u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    match kind {
        SimilarityKind::Dot => Ok(dot()),
        SimilarityKind::Cosine => {
            let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if nu == 0.0 || nv == 0.0 {
                return Err(invalid("cosine similarity of a zero vector"));
            }
            Ok((dot() / (nu * nv)).clamp(-1.0, 1.0))
        }
        SimilarityKind::Euclidean => Ok(-u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()),
    }
}

/// Pairwise scores between the rows of `queries` and `articles` on a tape.
pub fn score_matrix(tape: &mut Tape<'_>, queries: NodeId, articles: NodeId, kind: SimilarityKind) -> NodeId {
    match kind {
        SimilarityKind::Cosine => {
            let q = tape.l2_normalize_rows(queries);
            let a = tape.l2_normalize_rows(articles);
            let at = tape.transpose(a);
            tape.matmul(q, at)
        }
        SimilarityKind::Dot => {
            let at = tape.transpose(articles);
            tape.matmul(queries, at)
        }
        SimilarityKind::Euclidean => tape.neg_euclidean(queries, articles),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basic_identities() {
        let x = [0.3, -1.2, 2.0];
        assert!((similarity(&x, &x, SimilarityKind::Cosine).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(similarity(&[1.0, 0.0], &[0.0, 1.0], SimilarityKind::Dot).unwrap(), 0.0);
        assert_eq!(similarity(&x, &x, SimilarityKind::Euclidean).unwrap(), 0.0);
        assert!(similarity(&[0.0, 0.0], &[1.0, 0.0], SimilarityKind::Cosine).is_err());
        assert!(similarity(&[1.0], &[1.0, 0.0], SimilarityKind::Dot).is_err());
    }

    #[test]
    fn random_pairs_match_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let u: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let d: f64 = (0..7).map(|i| u[i] * v[i]).sum();
            let nu = (0..7).map(|i| u[i] * u[i]).sum::<f64>().sqrt();
            let nv = (0..7).map(|i| v[i] * v[i]).sum::<f64>().sqrt();
            let e = (0..7).map(|i| (u[i] - v[i]).powi(2)).sum::<f64>().sqrt();
            assert!((similarity(&u, &v, SimilarityKind::Dot).unwrap() - d).abs() < 1e-12);
            assert!((similarity(&u, &v, SimilarityKind::Cosine).unwrap() - d / (nu * nv)).abs() < 1e-12);
            assert!((similarity(&u, &v, SimilarityKind::Euclidean).unwrap() + e).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_scores_match_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = Tensor::from_fn(&[3, 4], |_| rng.gen_range(-1.0..1.0));
        let a = Tensor::from_fn(&[5, 4], |_| rng.gen_range(-1.0..1.0));
        for kind in [SimilarityKind::Cosine, SimilarityKind::Dot, SimilarityKind::Euclidean] {
            let mut tape = Tape::new();
            let qn = tape.constant(q.clone());
            let an = tape.constant(a.clone());
            let s = score_matrix(&mut tape, qn, an, kind);
            for i in 0..3 {
                for j in 0..5 {
                    let e = similarity(q.row(i), a.row(j), kind).unwrap();
                    assert!((tape.value(s).get(i, j) - e).abs() < 1e-12);
                }
            }
        }
    }
}
