use crate::autodiff::Matrix;
use crate::{Error, Result};

/// `‖pred − target‖₂ / ‖target‖₂`.
pub fn relative_l2(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "prediction length {} vs target length {}",
            pred.len(),
            target.len()
        )));
    }
    let norm = target.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    let diff = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

/// Mean over rows of the per-row relative L2 error.
pub fn mean_relative_l2(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.rows() == 0 {
        return Err(Error::config("relative error over an empty set"));
    }
    let mut sum = 0.0;
    for r in 0..pred.rows() {
        sum += relative_l2(pred.row(r), target.row(r))?;
    }
    Ok(sum / pred.rows() as f64)
}
