use crate::error::{Error, Result};

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("mse_loss"));
    }
    if pred.len() != target.len() {
        return Err(Error::shape("mse_loss", pred.len(), target.len()));
    }
    Ok(())
}

/// Mean of squared differences.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `2 (pred - target) / N`
pub fn mse_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::central_difference;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        assert_eq!(mse_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
    }

    #[test]
    fn small_example() {
        assert_eq!(mse_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
    }

    #[test]
    fn contract_errors() {
        assert!(matches!(mse_loss(&[], &[]), Err(Error::EmptyInput(_))));
        assert!(matches!(
            mse_loss(&[1.0], &[1.0, 2.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pred = [0.4, -1.2, 2.2];
        let target = [0.1, 0.5, 1.0];
        let g = mse_grad(&pred, &target).unwrap();
        for i in 0..3 {
            let n = central_difference(
                |v| {
                    let mut p = pred;
                    p[i] = v;
                    mse_loss(&p, &target).unwrap()
                },
                pred[i],
                1e-6,
            );
            assert!((g[i] - n).abs() <= 1e-6 * g[i].abs().max(1.0));
        }
    }
}
