use crate::error::{Error, Result};
use crate::numerics::DenseVector;

/// Central-difference gradient `(f(w+εeᵢ) − f(w−εeᵢ)) / 2ε`, one coordinate
/// at a time.
pub fn finite_diff_grad<F>(eval: F, w: &DenseVector, eps: f64) -> Result<DenseVector>
where
    F: Fn(&DenseVector) -> Result<f64>,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Validation(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let mut probe = w.as_slice().to_vec();
    let mut grad = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = eval(&DenseVector::new(probe.clone())?)?;
        probe[i] = orig - eps;
        let down = eval(&DenseVector::new(probe.clone())?)?;
        probe[i] = orig;
        for value in [up, down] {
            if !value.is_finite() {
                return Err(Error::NonFinite { index: i, value });
            }
        }
        grad.push((up - down) / (2.0 * eps));
    }
    DenseVector::new(grad)
}
