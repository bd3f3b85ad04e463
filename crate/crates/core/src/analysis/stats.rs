use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson product-moment correlation. `Ok(None)` when either vector is
/// constant (the coefficient is undefined).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::shape("pearson inputs", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs at least 2 points, got {}",
            x.len()
        )));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRatio {
    /// η ∈ [0, 1]; 0 when the values have no variance.
    pub eta: f64,
    /// Set when the total variance is zero and η is reported as 0 by
    /// convention.
    pub zero_variance: bool,
}

/// η = sqrt(Σ_g n_g (mean_g − mean)² / Σ_i (y_i − mean)²) over the groups
/// formed by `labels`.
pub fn correlation_ratio<L: Ord>(labels: &[L], values: &[f64]) -> Result<CorrelationRatio> {
    if labels.len() != values.len() {
        return Err(Error::shape(
            "correlation_ratio inputs",
            labels.len(),
            values.len(),
        ));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("correlation_ratio"));
    }
    let mut groups: BTreeMap<&L, Vec<f64>> = BTreeMap::new();
    for (l, &v) in labels.iter().zip(values) {
        groups.entry(l).or_default().push(v);
    }
    let groups: Vec<Vec<f64>> = groups.into_values().collect();
    correlation_ratio_grouped(&groups)
}

/// As [`correlation_ratio`] with values already grouped.
pub fn correlation_ratio_grouped(groups: &[Vec<f64>]) -> Result<CorrelationRatio> {
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    if all.is_empty() {
        return Err(Error::EmptyInput("correlation_ratio"));
    }
    let m = mean(&all);
    let total: f64 = all.iter().map(|y| (y - m).powi(2)).sum();
    if total == 0.0 {
        return Ok(CorrelationRatio {
            eta: 0.0,
            zero_variance: true,
        });
    }
    let between: f64 = groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| g.len() as f64 * (mean(g) - m).powi(2))
        .sum();
    Ok(CorrelationRatio {
        eta: (between / total).sqrt().clamp(0.0, 1.0),
        zero_variance: false,
    })
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    Ok(crate::numerics::mse_loss(pred, target)?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &[1.0; 4]).unwrap(), None);
        assert!(pearson(&x, &y[..3]).is_err());
        assert!(pearson(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn correlation_ratio_examples() {
        let one = correlation_ratio(&["a", "a", "a"], &[1.0, 2.0, 5.0]).unwrap();
        assert_eq!(one.eta, 0.0);
        let split = correlation_ratio(&["a", "a", "b", "b"], &[1.0, 1.0, 3.0, 3.0]).unwrap();
        assert!((split.eta - 1.0).abs() < 1e-12);
        let flat = correlation_ratio(&["a", "b"], &[2.0, 2.0]).unwrap();
        assert!(flat.zero_variance && flat.eta == 0.0);
        assert!(correlation_ratio::<&str>(&[], &[]).is_err());
    }
}
