use crate::error::{Error, Result};

/// Classical momentum SGD: `v ← μ·v + g`, `p ← p − lr·v`.
///
/// Velocity buffers are allocated on the first step and must keep the same
/// shapes afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be non-negative, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "sgd step tensor count",
                params.len(),
                grads.len(),
            ));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::shape(
                "sgd velocity tensor count",
                self.velocity.len(),
                params.len(),
            ));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != g.len() || p.len() != self.velocity[i].len() {
                return Err(Error::shape(
                    format!("sgd tensor {i}"),
                    self.velocity[i].len(),
                    format!("param {} / grad {}", p.len(), g.len()),
                ));
            }
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= self.learning_rate * *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut opt = SgdMomentum::new(0.1, 0.0).unwrap();
        let mut p = vec![1.0, -2.0];
        opt.step(vec![&mut p], vec![&[0.5, 1.0]]).unwrap();
        assert_eq!(p, vec![1.0 - 0.1 * 0.5, -2.0 - 0.1 * 1.0]);
    }

    #[test]
    fn zero_gradient_from_rest_changes_nothing() {
        let mut opt = SgdMomentum::new(0.1, 0.9).unwrap();
        let mut p = vec![1.0, 2.0, 3.0];
        opt.step(vec![&mut p], vec![&[0.0; 3]]).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn two_steps_with_constant_gradient() {
        let (lr, g) = (0.05, 2.0);
        let mut opt = SgdMomentum::new(lr, 0.9).unwrap();
        let mut p = vec![0.0];
        opt.step(vec![&mut p], vec![&[g]]).unwrap();
        opt.step(vec![&mut p], vec![&[g]]).unwrap();
        // v1 = g, v2 = 0.9 g + g
        assert!((-p[0] - lr * g * (1.0 + 1.9)).abs() < 1e-15);
    }

    #[test]
    fn shape_changes_are_rejected() {
        let mut opt = SgdMomentum::new(0.1, 0.9).unwrap();
        let mut a = vec![0.0; 2];
        opt.step(vec![&mut a], vec![&[1.0, 1.0]]).unwrap();
        let mut b = vec![0.0; 3];
        assert!(opt.step(vec![&mut b], vec![&[1.0; 3]]).is_err());
        assert!(opt.step(vec![&mut a], vec![&[1.0; 3]]).is_err());
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(SgdMomentum::new(-0.1, 0.9).is_err());
        assert!(SgdMomentum::new(0.1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn zero_momentum_matches_gradient_descent_exactly(
            p0 in prop::collection::vec(-10.0f64..10.0, 1..8),
            lr in 0.0f64..1.0,
            steps in 1usize..5,
        ) {
            let grads: Vec<f64> = p0.iter().map(|x| x * 0.3 - 1.0).collect();
            let mut opt = SgdMomentum::new(lr, 0.0).unwrap();
            let mut p = p0.clone();
            let mut q = p0;
            for _ in 0..steps {
                opt.step(vec![&mut p], vec![&grads]).unwrap();
                for (qi, gi) in q.iter_mut().zip(&grads) {
                    *qi -= lr * gi;
                }
            }
            prop_assert_eq!(p, q);
        }
    }
}
