//! Contrastive objectives on explicit vectors, with gradients.

use std::rc::Rc;

use crate::encoder::{score_matrix, similarity, SimilarityKind};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

use super::LossConfig;

/// Loss value and gradients with respect to every input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWithGrad {
    pub loss: f64,
    pub grad_query: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negatives: Vec<Vec<f64>>,
}

/// `-log(exp(s(q,a+)/τ) / Σ_{a ∈ A- ∪ {a+}} exp(s(q,a)/τ))`, max-shifted.
pub fn contrastive_nll(query: &[f64], positive: &[f64], negatives: &[&[f64]], cfg: &LossConfig) -> Result<LossWithGrad> {
    cfg.validate()?;
    let d = query.len();
    if positive.len() != d || negatives.iter().any(|n| n.len() != d) {
        return Err(Error::Shape("contrastive loss vectors differ in dimension".into()));
    }
    let mut rows = positive.to_vec();
    for n in negatives {
        rows.extend_from_slice(n);
    }
    let mut tape = Tape::new();
    let q = tape.input(Tensor::matrix(1, d, query.to_vec()));
    let a = tape.input(Tensor::matrix(negatives.len() + 1, d, rows));
    let s = score_matrix(&mut tape, q, a, cfg.similarity);
    let cands = Rc::new(vec![(0..=negatives.len()).collect::<Vec<_>>()]);
    let loss = tape.contrastive_nll(s, cands, cfg.temperature)?;
    let grads = tape.backward(loss)?;
    let ga = grads.node(a).cloned().unwrap_or_else(|| Tensor::zeros(&[negatives.len() + 1, d]));
    Ok(LossWithGrad {
        loss: tape.value(loss).item(),
        grad_query: grads.node(q).map_or(vec![0.0; d], |g| g.data().to_vec()),
        grad_positive: ga.row(0).to_vec(),
        grad_negatives: (1..=negatives.len()).map(|i| ga.row(i).to_vec()).collect(),
    })
}

/// `max(0, margin - s(q,a+) + s(q,a-))`.
pub fn triplet_loss(query: &[f64], positive: &[f64], negative: &[f64], margin: f64, kind: SimilarityKind) -> Result<f64> {
    let sp = similarity(query, positive, kind)?;
    let sn = similarity(query, negative, kind)?;
    Ok((margin - sp + sn).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(tau: f64, kind: SimilarityKind) -> LossConfig {
        LossConfig {
            temperature: tau,
            similarity: kind,
            ..Default::default()
        }
    }

    #[test]
    fn empty_negatives_is_zero() {
        let r = contrastive_nll(&[1.0, 2.0], &[0.5, -1.0], &[], &cfg(0.01, SimilarityKind::Cosine)).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grad_query.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn equal_negatives_give_log_n_plus_one() {
        let q = [0.3, -0.4, 0.5];
        let p = [1.0, 0.0, 2.0];
        let one = contrastive_nll(&q, &p, &[&p], &cfg(0.01, SimilarityKind::Dot)).unwrap();
        assert!((one.loss - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn matches_naive_formula() {
        let q = [0.2, 0.1, -0.3];
        let p = [0.5, 0.5, 0.1];
        let n1 = [0.1, -0.2, 0.4];
        let n2 = [-0.3, 0.2, 0.2];
        let tau = 0.5;
        let r = contrastive_nll(&q, &p, &[&n1, &n2], &cfg(tau, SimilarityKind::Dot)).unwrap();
        let dot = |a: &[f64]| a.iter().zip(&q).map(|(x, y)| x * y).sum::<f64>() / tau;
        let naive = -(dot(&p).exp() / (dot(&p).exp() + dot(&n1).exp() + dot(&n2).exp())).ln();
        assert!((r.loss - naive).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_softmax_form() {
        let q = [0.2, 0.1, -0.3];
        let p = [0.5, 0.5, 0.1];
        let n = [0.1, -0.2, 0.4];
        let r = contrastive_nll(&q, &p, &[&n], &cfg(1.0, SimilarityKind::Dot)).unwrap();
        let s = |a: &[f64]| a.iter().zip(&q).map(|(x, y)| x * y).sum::<f64>();
        let pn = (s(&n) - s(&p)).exp();
        let prob_n = pn / (1.0 + pn);
        for k in 0..3 {
            assert!((r.grad_positive[k] + prob_n * q[k]).abs() < 1e-12);
            assert!((r.grad_negatives[0][k] - prob_n * q[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn triplet_cases() {
        let q = [1.0, 0.0];
        assert_eq!(triplet_loss(&q, &[1.0, 0.0], &[-1.0, 0.0], 1.0, SimilarityKind::Cosine).unwrap(), 0.0);
        assert_eq!(triplet_loss(&q, &[0.0, 1.0], &[0.0, 2.0], 1.0, SimilarityKind::Cosine).unwrap(), 1.0);
    }

    #[test]
    fn zero_temperature_rejected() {
        assert!(contrastive_nll(&[1.0], &[1.0], &[], &cfg(0.0, SimilarityKind::Dot)).is_err());
    }
}
