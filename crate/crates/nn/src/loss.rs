//! Softmax cross-entropy on float-cast logits. Never part of an exported
//! graph; the encrypted path stops at the logits.

use ndarray::Array2;

use crate::NnError;

/// Mean cross-entropy over the batch plus its gradient with respect to the
/// logits. Numerically stable for the very large logit magnitudes integer
/// scaling produces.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>), NnError> {
    let (batch, classes) = logits.dim();
    if labels.len() != batch {
        return Err(NnError::Shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(NnError::Parameter(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut grad = Array2::zeros((batch, classes));
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &l in row {
            z += (l - m).exp();
        }
        loss += z.ln() - (row[labels[i]] - m);
        for (j, &l) in row.iter().enumerate() {
            let p = (l - m).exp() / z;
            let y = if j == labels[i] { 1.0 } else { 0.0 };
            grad[[i, j]] = (p - y) / batch as f64;
        }
    }
    Ok((loss / batch as f64, grad))
}
