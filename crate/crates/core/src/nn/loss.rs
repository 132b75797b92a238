use ndarray::{Array2, ArrayView2};

use super::NnError;

/// Mean squared error `(1/d) * sum (p_i - t_i)^2` and its gradient
/// `(2/d) * (p - t)` with respect to the prediction.
pub fn mse(prediction: &[f32], target: &[f32]) -> Result<(f64, Vec<f32>), NnError> {
    if prediction.len() != target.len() {
        return Err(NnError::DimensionMismatch {
            expected: prediction.len(),
            found: target.len(),
        });
    }
    let d = prediction.len() as f64;
    let mut loss = 0.0f64;
    let grad = prediction
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let diff = p as f64 - t as f64;
            loss += diff * diff;
            (2.0 * diff / d) as f32
        })
        .collect();
    Ok((loss / d, grad))
}

/// Batch mean of per-row MSE, with gradient for every prediction entry.
pub fn mse_batch(
    prediction: ArrayView2<'_, f32>,
    target: ArrayView2<'_, f32>,
) -> Result<(f64, Array2<f32>), NnError> {
    if prediction.dim() != target.dim() {
        return Err(NnError::DimensionMismatch {
            expected: prediction.len(),
            found: target.len(),
        });
    }
    let n = prediction.len() as f64;
    let diff = &prediction - &target;
    let loss = diff.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / n;
    let scale = (2.0 / n) as f32;
    Ok((loss, diff.mapv(|v| v * scale)))
}
