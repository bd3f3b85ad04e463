use crate::error::{Error, Result};

/// clicks / impressions.
pub fn compute_ctr(clicks: u64, impressions: u64) -> Result<f64> {
    if impressions == 0 {
        return Err(Error::ZeroImpressions);
    }
    Ok(clicks as f64 / impressions as f64)
}

/// Regression target: `log10(100·ctr + 1)`.
pub fn log_transform_ctr(ctr: f64) -> Result<f64> {
    if ctr.is_nan() || ctr < 0.0 {
        return Err(Error::NegativeCtr(ctr));
    }
    Ok((100.0 * ctr).ln_1p() / std::f64::consts::LN_10)
}

/// Maps a model output back to a raw CTR. Negative results clamp to 0.
pub fn inverse_transform(y: f64) -> f64 {
    ((y * std::f64::consts::LN_10).exp_m1() / 100.0).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ctr_examples() {
        assert_eq!(compute_ctr(5, 1000).unwrap(), 0.005);
        assert_eq!(compute_ctr(0, 500).unwrap(), 0.0);
        assert!(matches!(compute_ctr(10, 0), Err(Error::ZeroImpressions)));
    }

    #[test]
    fn transform_examples() {
        assert_eq!(log_transform_ctr(0.0).unwrap(), 0.0);
        assert!((log_transform_ctr(0.01).unwrap() - std::f64::consts::LOG10_2).abs() < 1e-12);
        assert!((inverse_transform(log_transform_ctr(0.037).unwrap()) - 0.037).abs() < 1e-12);
        assert!(log_transform_ctr(-1e-9).is_err());
        assert_eq!(inverse_transform(-0.5), 0.0);
    }
}
