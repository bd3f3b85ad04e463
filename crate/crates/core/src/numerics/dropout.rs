use rand::Rng;

use super::{Matrix, Mode};
use crate::error::{Error, Result};

/// Inverted dropout mask: per-entry multiplier, either 0 or `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    factors: Vec<f64>,
}

impl DropoutMask {
    pub fn keep_all(len: usize) -> Self {
        Self {
            factors: vec![1.0; len],
        }
    }

    pub fn kept(&self) -> usize {
        self.factors.iter().filter(|&&f| f != 0.0).count()
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.as_slice().len() != self.factors.len() {
            return Err(Error::shape(
                "dropout mask",
                self.factors.len(),
                x.as_slice().len(),
            ));
        }
        let mut out = x.clone();
        out.as_mut_slice()
            .iter_mut()
            .zip(&self.factors)
            .for_each(|(v, f)| *v *= f);
        Ok(out)
    }

    /// The backward pass is the same elementwise product.
    pub fn backward(&self, grad_out: &Matrix) -> Result<Matrix> {
        self.apply(grad_out)
    }
}

pub fn dropout_forward<R: Rng + ?Sized>(
    p: f64,
    x: &Matrix,
    mode: Mode,
    rng: &mut R,
) -> Result<(Matrix, DropoutMask)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    let n = x.as_slice().len();
    if mode == Mode::Infer || p == 0.0 {
        return Ok((x.clone(), DropoutMask::keep_all(n)));
    }
    let scale = 1.0 / (1.0 - p);
    let factors = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
        .collect();
    let mask = DropoutMask { factors };
    let out = mask.apply(x)?;
    Ok((out, mask))
}
