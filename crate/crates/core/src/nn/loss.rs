use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Row-wise log-softmax, computed with the max-shift for stability.
pub fn log_softmax(logits: &Tensor) -> Tensor {
    let cols = logits.cols();
    let mut out = logits.clone();
    for r in 0..logits.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
        for v in row.iter_mut().take(cols) {
            *v -= lse;
        }
    }
    out
}

pub fn softmax(logits: &Tensor) -> Tensor {
    log_softmax(logits).map(libm::exp)
}

/// Mean cross-entropy of `labels` under `softmax(logits)`, and its exact
/// gradient with respect to the logits.
pub fn cross_entropy_logits(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = (logits.rows(), logits.cols());
    if labels.len() != b {
        bail!(Dimension, "{} labels for {b} logit rows", labels.len());
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        bail!(Input, "label {bad} out of range for {c} classes");
    }
    logits.ensure_finite("logits")?;
    let logp = log_softmax(logits);
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad: Vec<f64> = Vec::with_capacity(b * c);
    for (r, &y) in labels.iter().enumerate() {
        let row = logp.row(r);
        loss -= row[y];
        for (j, &lp) in row.iter().enumerate() {
            let onehot = if j == y { 1.0 } else { 0.0 };
            grad.push((libm::exp(lp) - onehot) * inv_b);
        }
    }
    Ok((loss * inv_b, Tensor::matrix(b, c, grad)?))
}
