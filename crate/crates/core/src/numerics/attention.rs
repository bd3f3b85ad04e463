use serde::{Deserialize, Serialize};

use super::matrix::dot;
use super::Matrix;
use crate::error::{Error, Result};

/// Scores each item with `w · item + b`; a softmax over the scores gives
/// the attention weights. One scorer is shared by every item it ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionScorer {
    pub weight: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerGrads {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl ScorerGrads {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weight: vec![0.0; dim],
            bias: 0.0,
        }
    }
}

/// Result of pooling `m` items.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub pooled: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AttentionScorer {
    /// Zero scorer: every item gets the same score, so attention is uniform.
    pub fn zeros(dim: usize) -> Self {
        Self {
            weight: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    pub fn scores(&self, items: &Matrix) -> Vec<f64> {
        (0..items.rows())
            .map(|r| dot(&self.weight, items.row(r)) + self.bias)
            .collect()
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax-weighted sum of the rows of `items`.
pub fn attention_pool(scorer: &AttentionScorer, items: &Matrix) -> Result<Pooled> {
    if items.rows() == 0 {
        return Err(Error::EmptyInput("attention_pool"));
    }
    if items.cols() != scorer.dim() {
        return Err(Error::shape(
            "attention_pool items",
            scorer.dim(),
            items.cols(),
        ));
    }
    let weights = softmax(&scorer.scores(items));
    let mut pooled = vec![0.0; items.cols()];
    for (r, w) in weights.iter().enumerate() {
        for (p, v) in pooled.iter_mut().zip(items.row(r)) {
            *p += w * v;
        }
    }
    Ok(Pooled { pooled, weights })
}

/// Backward through [`attention_pool`]. `weights` are the forward softmax
/// weights. Scorer gradients are accumulated into `grads`; the gradient with
/// respect to every item row is returned.
pub fn attention_pool_backward(
    scorer: &AttentionScorer,
    items: &Matrix,
    weights: &[f64],
    grad_pooled: &[f64],
    grads: &mut ScorerGrads,
) -> Result<Matrix> {
    let m = items.rows();
    if weights.len() != m || grad_pooled.len() != items.cols() || items.cols() != scorer.dim() {
        return Err(Error::MissingCache(format!(
            "attention cache has {} weights for {m} items",
            weights.len()
        )));
    }
    // d loss / d weight_i, then through the softmax Jacobian.
    let grad_w: Vec<f64> = (0..m).map(|r| dot(grad_pooled, items.row(r))).collect();
    let mean: f64 = weights.iter().zip(&grad_w).map(|(a, g)| a * g).sum();
    let grad_scores: Vec<f64> = weights
        .iter()
        .zip(&grad_w)
        .map(|(a, g)| a * (g - mean))
        .collect();

    let mut grad_items = Matrix::zeros(m, items.cols());
    for r in 0..m {
        let gs = grad_scores[r];
        let row = items.row(r);
        for (gw, v) in grads.weight.iter_mut().zip(row) {
            *gw += gs * v;
        }
        grads.bias += gs;
        let out = grad_items.row_mut(r);
        for c in 0..out.len() {
            out[c] = weights[r] * grad_pooled[c] + gs * scorer.weight[c];
        }
    }
    Ok(grad_items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::central_difference;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::new(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn singleton_gets_full_weight() {
        let scorer = AttentionScorer {
            weight: vec![0.3, -2.0],
            bias: 0.1,
        };
        let items = Matrix::from_rows(&[vec![1.5, 2.5]]).unwrap();
        let p = attention_pool(&scorer, &items).unwrap();
        assert_eq!(p.weights, vec![1.0]);
        assert_eq!(p.pooled, vec![1.5, 2.5]);
    }

    #[test]
    fn identical_rows_get_uniform_weights() {
        let scorer = AttentionScorer {
            weight: vec![0.9, 0.4, -0.2],
            bias: 0.0,
        };
        let row = vec![0.2, -0.7, 1.1];
        let items = Matrix::from_rows(&vec![row.clone(); 5]).unwrap();
        let p = attention_pool(&scorer, &items).unwrap();
        for w in &p.weights {
            assert!((w - 0.2).abs() < 1e-12);
        }
        for (a, b) in p.pooled.iter().zip(&row) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_scorer_gives_row_mean() {
        let items = Matrix::from_rows(&[vec![1.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let p = attention_pool(&AttentionScorer::zeros(2), &items).unwrap();
        assert_eq!(p.weights, vec![0.5, 0.5]);
        assert_eq!(p.pooled, vec![2.0, 2.0]);
    }

    #[test]
    fn empty_items_are_rejected() {
        assert!(matches!(
            attention_pool(&AttentionScorer::zeros(3), &Matrix::zeros(0, 3)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let scorer = AttentionScorer {
                weight: (0..4).map(|_| rng.random_range(-1.5..1.5)).collect(),
                bias: rng.random_range(-1.0..1.0),
            };
            let items = random(5, 4, &mut rng);
            let upstream: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |s: &AttentionScorer, it: &Matrix| {
                dot(&attention_pool(s, it).unwrap().pooled, &upstream)
            };
            let fwd = attention_pool(&scorer, &items).unwrap();
            let mut grads = ScorerGrads::zeros(4);
            let gi = attention_pool_backward(&scorer, &items, &fwd.weights, &upstream, &mut grads)
                .unwrap();
            for i in 0..20 {
                let n = central_difference(
                    |v| {
                        let mut it = items.clone();
                        it.as_mut_slice()[i] = v;
                        loss(&scorer, &it)
                    },
                    items.as_slice()[i],
                    1e-6,
                );
                assert_rel(gi.as_slice()[i], n);
            }
            for c in 0..4 {
                let n = central_difference(
                    |v| {
                        let mut s = scorer.clone();
                        s.weight[c] = v;
                        loss(&s, &items)
                    },
                    scorer.weight[c],
                    1e-6,
                );
                assert_rel(grads.weight[c], n);
            }
            // The bias shifts every score equally, so its gradient vanishes.
            assert!(grads.bias.abs() < 1e-12);
        }
    }

    fn assert_rel(a: f64, n: f64) {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        assert!(rel <= 1e-4, "analytic {a} vs numeric {n}");
    }

    proptest! {
        #[test]
        fn weights_form_a_simplex(
            data in prop::collection::vec(-50.0f64..50.0, 12),
            w in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            let items = Matrix::new(4, 3, data).unwrap();
            let p = attention_pool(&AttentionScorer { weight: w, bias: 0.0 }, &items).unwrap();
            prop_assert!(p.weights.iter().all(|&x| x >= 0.0));
            prop_assert!((p.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn permuting_rows_permutes_weights(
            data in prop::collection::vec(-5.0f64..5.0, 15),
            w in prop::collection::vec(-2.0f64..2.0, 3),
            shift in 0usize..5,
        ) {
            let items = Matrix::new(5, 3, data).unwrap();
            let scorer = AttentionScorer { weight: w, bias: 0.0 };
            let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| items.row(i).to_vec()).collect();
            let permuted = Matrix::from_rows(&rows).unwrap();
            let a = attention_pool(&scorer, &items).unwrap();
            let b = attention_pool(&scorer, &permuted).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert!((b.weights[k] - a.weights[i]).abs() <= 1e-12);
            }
            for (x, y) in a.pooled.iter().zip(&b.pooled) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }

        #[test]
        fn constant_score_shift_leaves_weights_unchanged(
            data in prop::collection::vec(-5.0f64..5.0, 12),
            w in prop::collection::vec(-2.0f64..2.0, 3),
            shift in -100.0f64..100.0,
        ) {
            let items = Matrix::new(4, 3, data).unwrap();
            let a = attention_pool(&AttentionScorer { weight: w.clone(), bias: 0.0 }, &items).unwrap();
            let b = attention_pool(&AttentionScorer { weight: w, bias: shift }, &items).unwrap();
            for (x, y) in a.weights.iter().zip(&b.weights) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }
    }
}
