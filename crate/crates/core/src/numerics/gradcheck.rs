//! Central-difference gradient checking.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Relative errors are measured against `max(|analytic|, |numeric|, floor)`
    /// so that gradients which are zero up to rounding do not blow up.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Index of the coordinate with the largest error.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub passed: bool,
}

/// `(f(x + h) - f(x - h)) / 2h` for a scalar function of one variable.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `f` at `params`.
///
/// `f` must be deterministic in its argument (freeze dropout masks, keep the
/// batch fixed). `params` is perturbed in place and restored afterwards.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    params: &mut [f64],
    analytic: &[f64],
    config: GradCheckConfig,
) -> Result<GradCheckReport> {
    if params.len() != analytic.len() {
        return Err(Error::shape("grad_check", params.len(), analytic.len()));
    }
    let mut eval = |p: &[f64]| -> Result<f64> {
        let v = f(p)?;
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok(v)
    };
    eval(params)?;

    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        passed: true,
    };
    for i in 0..params.len() {
        let original = params[i];
        params[i] = original + config.step;
        let plus = eval(params);
        params[i] = original - config.step;
        let minus = eval(params);
        params[i] = original;
        let numeric = (plus? - minus?) / (2.0 * config.step);
        let rel = relative_error(analytic[i], numeric, config.floor);
        if rel > report.max_relative_error || report.checked == 0 {
            report.max_relative_error = rel;
            report.worst_index = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
        report.checked += 1;
    }
    report.passed = report.max_relative_error <= config.tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_at_three() {
        let mut p = [3.0];
        let report = grad_check(
            |p| Ok(p[0] * p[0]),
            &mut p,
            &[6.0],
            GradCheckConfig {
                tolerance: 1e-6,
                ..GradCheckConfig::default()
            },
        )
        .unwrap();
        assert!(report.passed);
        assert!((report.worst_numeric - 6.0).abs() <= 1e-6);
        assert_eq!(p, [3.0]);
    }

    #[test]
    fn wrong_gradient_fails() {
        let mut p = [1.0, 2.0];
        let report = grad_check(
            |p| Ok(p[0] * p[1]),
            &mut p,
            &[2.0, 1.5],
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst_index, 1);
    }

    #[test]
    fn nan_objective_aborts() {
        let mut p = [1.0];
        let err = grad_check(|_| Ok(f64::NAN), &mut p, &[0.0], GradCheckConfig::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }
}
