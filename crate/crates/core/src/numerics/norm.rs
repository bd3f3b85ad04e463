use super::matrix::dot;

/// Guard against division by zero for degenerate (all-zero) vectors.
pub const NORM_EPSILON: f64 = 1e-12;

/// `v / max(‖v‖₂, epsilon)`.
pub fn l2_normalize(v: &[f64], epsilon: f64) -> Vec<f64> {
    let denom = dot(v, v).sqrt().max(epsilon);
    v.iter().map(|x| x / denom).collect()
}

/// Gradient of [`l2_normalize`] with respect to its input. `v` is the input
/// and `u` the normalised output from the forward pass.
pub fn l2_normalize_backward(v: &[f64], u: &[f64], grad_u: &[f64], epsilon: f64) -> Vec<f64> {
    let norm = dot(v, v).sqrt();
    if norm < epsilon {
        return grad_u.iter().map(|g| g / epsilon).collect();
    }
    // (I - u uᵀ) g / ‖v‖
    let proj = dot(u, grad_u);
    grad_u
        .iter()
        .zip(u)
        .map(|(g, ui)| (g - ui * proj) / norm)
        .collect()
}
