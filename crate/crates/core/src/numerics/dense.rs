use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Fully connected layer computing `x · W + b` row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `in_dim × out_dim`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients of a dense layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseGrads {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn accumulate(&mut self, other: &DenseGrads) {
        add_into(self.weight.as_mut_slice(), other.weight.as_slice());
        add_into(&mut self.bias, &other.bias);
    }
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.cols() != bias.len() {
            return Err(Error::shape("DenseLayer bias", weight.cols(), bias.len()));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = if in_dim + out_dim == 0 {
            0.0
        } else {
            (6.0 / (in_dim + out_dim) as f64).sqrt()
        };
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-1.0..=1.0) * limit)
            .collect();
        Self {
            weight: Matrix::from_parts(in_dim, out_dim, data),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape("dense_forward input", self.in_dim(), x.cols()));
        }
        let mut out = x.matmul(&self.weight)?;
        for r in 0..out.rows() {
            add_into(out.row_mut(r), &self.bias);
        }
        Ok(out)
    }

    /// Parameter gradients only; used when the input is data and its
    /// gradient is not needed.
    pub fn backward_params(&self, x: &Matrix, grad_out: &Matrix) -> Result<DenseGrads> {
        self.check_backward(x, grad_out)?;
        Ok(DenseGrads {
            weight: x.t_matmul(grad_out)?,
            bias: grad_out.column_sums(),
        })
    }

    /// Returns `(grad_x, param grads)`.
    pub fn backward(&self, x: &Matrix, grad_out: &Matrix) -> Result<(Matrix, DenseGrads)> {
        let grads = self.backward_params(x, grad_out)?;
        let grad_x = grad_out.matmul_t(&self.weight)?;
        Ok((grad_x, grads))
    }

    fn check_backward(&self, x: &Matrix, grad_out: &Matrix) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(
                "dense_backward input",
                self.in_dim(),
                x.cols(),
            ));
        }
        if grad_out.cols() != self.out_dim() || grad_out.rows() != x.rows() {
            return Err(Error::shape(
                "dense_backward grad_out",
                format!("{}x{}", x.rows(), self.out_dim()),
                format!("{}x{}", grad_out.rows(), grad_out.cols()),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::central_difference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weight_passes_input_through() {
        let layer = DenseLayer::new(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        let x = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn sums_inputs_plus_bias() {
        let layer = DenseLayer::new(
            Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
            vec![1.0],
        )
        .unwrap();
        let x = Matrix::from_rows(&[vec![2.0, 5.0]]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().as_slice(), &[8.0]);
    }

    #[test]
    fn wrong_input_width_is_a_shape_error() {
        let layer = DenseLayer::zeros(2, 3);
        let x = Matrix::zeros(1, 3);
        assert!(matches!(layer.forward(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = DenseLayer::glorot(3, 4, &mut rng);
        let x = Matrix::new(2, 3, vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3]).unwrap();
        let (gx, g) = layer.backward(&x, &Matrix::zeros(2, 4)).unwrap();
        assert!(gx.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.weight.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_layer_weight_gradient_is_input_times_upstream() {
        let (w, a, g) = (1.7, -0.4, 2.5);
        let layer = DenseLayer::new(Matrix::new(1, 1, vec![w]).unwrap(), vec![0.3]).unwrap();
        let x = Matrix::new(1, 1, vec![a]).unwrap();
        let (gx, grads) = layer
            .backward(&x, &Matrix::new(1, 1, vec![g]).unwrap())
            .unwrap();
        assert_eq!(grads.weight.as_slice(), &[a * g]);
        assert_eq!(grads.bias, vec![g]);
        assert_eq!(gx.as_slice(), &[w * g]);
    }

    #[test]
    fn random_layer_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let layer = DenseLayer::glorot(3, 4, &mut rng);
            let x =
                Matrix::new(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let upstream =
                Matrix::new(2, 4, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            // Loss = <upstream, forward(x)>.
            let loss = |l: &DenseLayer, x: &Matrix| -> f64 {
                crate::numerics::matrix::dot(l.forward(x).unwrap().as_slice(), upstream.as_slice())
            };
            let (gx, grads) = layer.backward(&x, &upstream).unwrap();

            let wl = layer.clone();
            for i in 0..wl.weight.as_slice().len() {
                let numeric = central_difference(
                    |v| {
                        let mut l = wl.clone();
                        l.weight.as_mut_slice()[i] = v;
                        loss(&l, &x)
                    },
                    wl.weight.as_slice()[i],
                    1e-6,
                );
                assert_close(grads.weight.as_slice()[i], numeric);
            }
            for i in 0..wl.bias.len() {
                let numeric = central_difference(
                    |v| {
                        let mut l = wl.clone();
                        l.bias[i] = v;
                        loss(&l, &x)
                    },
                    wl.bias[i],
                    1e-6,
                );
                assert_close(grads.bias[i], numeric);
            }
            let mut xm = x.clone();
            for i in 0..x.as_slice().len() {
                let numeric = central_difference(
                    |v| {
                        xm.as_mut_slice()[i] = v;
                        loss(&layer, &xm)
                    },
                    x.as_slice()[i],
                    1e-6,
                );
                xm.as_mut_slice()[i] = x.as_slice()[i];
                assert_close(gx.as_slice()[i], numeric);
            }
        }
    }

    fn assert_close(analytic: f64, numeric: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        assert!(rel <= 1e-5, "analytic {analytic} vs numeric {numeric}");
    }
}
