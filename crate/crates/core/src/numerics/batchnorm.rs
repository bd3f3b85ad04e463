use serde::{Deserialize, Serialize};

use super::{Matrix, Mode};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-column batch normalisation with learnable scale and shift.
///
/// Train mode standardises each column by the batch mean and biased batch
/// variance; infer mode uses the running estimates. Running statistics are
/// never touched by the forward pass itself: train-mode forward returns the
/// batch moments and the caller folds them in with [`BatchNormLayer::update_running`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

/// Everything train-mode backward needs from the forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

/// Batch moments observed by one train-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Unbiased (n-1) variance, the form folded into the running estimate.
    pub unbiased_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNormGrads {
    pub fn zeros(dim: usize) -> Self {
        Self {
            gamma: vec![0.0; dim],
            beta: vec![0.0; dim],
        }
    }
}

impl BatchNormLayer {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Mode-dispatching forward. Train mode returns the cache and moments.
    pub fn forward(
        &self,
        x: &Matrix,
        mode: Mode,
    ) -> Result<(Matrix, Option<(BatchNormCache, BatchMoments)>)> {
        match mode {
            Mode::Train => {
                let (out, cache, moments) = self.forward_train(x)?;
                Ok((out, Some((cache, moments))))
            }
            Mode::Infer => Ok((self.forward_infer(x)?, None)),
        }
    }

    pub fn forward_train(&self, x: &Matrix) -> Result<(Matrix, BatchNormCache, BatchMoments)> {
        self.check_width(x)?;
        let n = x.rows();
        if n < 2 {
            return Err(Error::DegenerateBatch { rows: n });
        }
        let dim = self.dim();
        let mut mean = x.column_sums();
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for r in 0..n {
            for ((v, x), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                let d = x - m;
                *v += d * d;
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / n as f64).collect();
        let unbiased: Vec<f64> = var.iter().map(|v| v / (n - 1) as f64).collect();
        let inv_std: Vec<f64> = biased
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();

        let mut normalized = Matrix::zeros(n, dim);
        let mut out = Matrix::zeros(n, dim);
        for r in 0..n {
            let xr = x.row(r);
            let nr = normalized.row_mut(r);
            for c in 0..dim {
                nr[c] = (xr[c] - mean[c]) * inv_std[c];
            }
            let nr = normalized.row(r).to_vec();
            let or = out.row_mut(r);
            for c in 0..dim {
                or[c] = self.gamma[c] * nr[c] + self.beta[c];
            }
        }
        Ok((
            out,
            BatchNormCache {
                normalized,
                inv_std,
            },
            BatchMoments {
                mean,
                unbiased_var: unbiased,
            },
        ))
    }

    /// Standardises with the running estimates; works for any batch size.
    pub fn forward_infer(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let dim = self.dim();
        let scale: Vec<f64> = (0..dim)
            .map(|c| self.gamma[c] / (self.running_var[c] + self.epsilon).sqrt())
            .collect();
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for c in 0..dim {
                row[c] = (row[c] - self.running_mean[c]) * scale[c] + self.beta[c];
            }
        }
        Ok(out)
    }

    pub fn update_running(&mut self, moments: &BatchMoments) {
        let m = self.momentum;
        for c in 0..self.dim() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * moments.mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * moments.unbiased_var[c];
        }
    }

    /// Exact gradient of the train-mode expression, including the
    /// dependence of the batch mean and variance on every input row.
    pub fn backward(
        &self,
        cache: &BatchNormCache,
        grad_out: &Matrix,
    ) -> Result<(Matrix, BatchNormGrads)> {
        let (n, dim) = cache.normalized.shape();
        if grad_out.shape() != (n, dim) || dim != self.dim() {
            return Err(Error::MissingCache(format!(
                "batch norm cache is {n}x{dim}, gradient is {}x{}",
                grad_out.rows(),
                grad_out.cols()
            )));
        }
        let mut grads = BatchNormGrads::zeros(dim);
        // Column sums of dxhat and dxhat * xhat.
        let mut sum_dxhat = vec![0.0; dim];
        let mut sum_dxhat_xhat = vec![0.0; dim];
        for r in 0..n {
            let g = grad_out.row(r);
            let xhat = cache.normalized.row(r);
            for c in 0..dim {
                grads.beta[c] += g[c];
                grads.gamma[c] += g[c] * xhat[c];
                let dxhat = g[c] * self.gamma[c];
                sum_dxhat[c] += dxhat;
                sum_dxhat_xhat[c] += dxhat * xhat[c];
            }
        }
        let nf = n as f64;
        let mut grad_x = Matrix::zeros(n, dim);
        for r in 0..n {
            let g = grad_out.row(r);
            let xhat = cache.normalized.row(r).to_vec();
            let gx = grad_x.row_mut(r);
            for c in 0..dim {
                let dxhat = g[c] * self.gamma[c];
                gx[c] = cache.inv_std[c] / nf
                    * (nf * dxhat - sum_dxhat[c] - xhat[c] * sum_dxhat_xhat[c]);
            }
        }
        Ok((grad_x, grads))
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::shape("batchnorm input", self.dim(), x.cols()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::central_difference;
    use crate::numerics::matrix::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::new(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let bn = BatchNormLayer::new(2);
        let x = Matrix::from_rows(&[vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 5.0]]).unwrap();
        let (y, _, _) = bn.forward_train(&x).unwrap();
        for r in 0..3 {
            assert!(y.get(r, 0).abs() <= 1e-6);
        }
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let mut bn = BatchNormLayer::new(3);
        bn.gamma = vec![0.0; 3];
        bn.beta = vec![0.5, -1.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (y, _, _) = bn.forward_train(&random(5, 3, &mut rng)).unwrap();
        for r in 0..5 {
            assert_eq!(y.row(r), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn train_output_is_standardised() {
        let bn = BatchNormLayer::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(8, 4, &mut rng);
        let (y, _, _) = bn.forward_train(&x).unwrap();
        for c in 0..4 {
            let col: Vec<f64> = (0..8).map(|r| y.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / 8.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            // Independent recomputation of the expected shrink factor.
            let xc: Vec<f64> = (0..8).map(|r| x.get(r, c)).collect();
            let xm = xc.iter().sum::<f64>() / 8.0;
            let xv = xc.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() <= 1e-6);
            assert!((var - xv / (xv + BN_EPSILON)).abs() <= 1e-12);
            assert!((var - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn single_row_train_batch_is_rejected() {
        let bn = BatchNormLayer::new(2);
        assert!(matches!(
            bn.forward_train(&Matrix::zeros(1, 2)),
            Err(Error::DegenerateBatch { rows: 1 })
        ));
        // Inference accepts a single row.
        assert!(bn.forward_infer(&Matrix::zeros(1, 2)).is_ok());
    }

    #[test]
    fn infer_uses_running_statistics() {
        let mut bn = BatchNormLayer::new(1);
        bn.running_mean = vec![2.0];
        bn.running_var = vec![4.0 - BN_EPSILON];
        bn.gamma = vec![3.0];
        bn.beta = vec![1.0];
        let y = bn
            .forward_infer(&Matrix::new(1, 1, vec![6.0]).unwrap())
            .unwrap();
        assert!((y.get(0, 0) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn running_update_blends_with_momentum() {
        let mut bn = BatchNormLayer::new(1);
        let x = Matrix::new(2, 1, vec![1.0, 3.0]).unwrap();
        let (_, _, moments) = bn.forward_train(&x).unwrap();
        bn.update_running(&moments);
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        // unbiased variance of {1, 3} is 2
        assert!((bn.running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let bn = BatchNormLayer::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, cache, _) = bn.forward_train(&random(4, 3, &mut rng)).unwrap();
        let (gx, g) = bn.backward(&cache, &Matrix::zeros(4, 3)).unwrap();
        assert!(gx.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.gamma.iter().chain(&g.beta).all(|&v| v == 0.0));
    }

    #[test]
    fn constant_upstream_gives_zero_column_sums() {
        let bn = BatchNormLayer::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, cache, _) = bn.forward_train(&random(6, 3, &mut rng)).unwrap();
        let (gx, _) = bn
            .backward(&cache, &Matrix::new(6, 3, vec![0.7; 18]).unwrap())
            .unwrap();
        for s in gx.column_sums() {
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let bn = BatchNormLayer::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, cache, _) = bn.forward_train(&random(4, 3, &mut rng)).unwrap();
        assert!(matches!(
            bn.backward(&cache, &Matrix::zeros(5, 3)),
            Err(Error::MissingCache(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let mut bn = BatchNormLayer::new(3);
            bn.gamma = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
            bn.beta = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = random(4, 3, &mut rng);
            let upstream = random(4, 3, &mut rng);
            let loss = |bn: &BatchNormLayer, x: &Matrix| {
                dot(
                    bn.forward_train(x).unwrap().0.as_slice(),
                    upstream.as_slice(),
                )
            };
            let (_, cache, _) = bn.forward_train(&x).unwrap();
            let (gx, g) = bn.backward(&cache, &upstream).unwrap();

            for i in 0..12 {
                let numeric = central_difference(
                    |v| {
                        let mut xm = x.clone();
                        xm.as_mut_slice()[i] = v;
                        loss(&bn, &xm)
                    },
                    x.as_slice()[i],
                    1e-5,
                );
                assert_rel(gx.as_slice()[i], numeric, 1e-4);
            }
            for c in 0..3 {
                let ng = central_difference(
                    |v| {
                        let mut b = bn.clone();
                        b.gamma[c] = v;
                        loss(&b, &x)
                    },
                    bn.gamma[c],
                    1e-5,
                );
                let nb = central_difference(
                    |v| {
                        let mut b = bn.clone();
                        b.beta[c] = v;
                        loss(&b, &x)
                    },
                    bn.beta[c],
                    1e-5,
                );
                assert_rel(g.gamma[c], ng, 1e-4);
                assert_rel(g.beta[c], nb, 1e-4);
            }
        }
    }

    fn assert_rel(a: f64, n: f64, tol: f64) {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        assert!(rel <= tol, "analytic {a} vs numeric {n} (rel {rel})");
    }
}
