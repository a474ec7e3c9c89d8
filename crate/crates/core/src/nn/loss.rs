use ndarray::Array2;

use crate::error::{Error, Result};

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// Mean categorical cross-entropy over integer labels, and its gradient
/// with respect to the logits.
pub fn softmax_ce(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (b, c) = logits.dim();
    if labels.len() != b || b == 0 {
        return Err(Error::Shape(format!("{b} logit rows for {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Label(format!("label {bad} outside [0, {}]", c - 1)));
    }
    let mut grad = Array2::zeros((b, c));
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        for (j, v) in row.iter().enumerate() {
            grad[[i, j]] = (v - lse).exp() / b as f64;
        }
        grad[[i, y]] -= 1.0 / b as f64;
    }
    Ok((loss / b as f64, grad))
}
