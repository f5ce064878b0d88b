//! Softmax followed by mean cross-entropy over the batch.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor4;

fn check_labels(dims_batch: usize, classes: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != dims_batch {
        return shape_err(format!("{} labels for a batch of {dims_batch}", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Returns the mean loss `-log softmax(logits)[label]` and the softmax
/// probabilities. Each batch item's `C * H * W` values are its class scores.
pub fn softmax_xent_forward(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4)> {
    let dims = logits.dims();
    let classes = dims.item_len();
    check_labels(dims.batch, classes, labels)?;
    let mut probs = logits.clone();
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row = probs.item_mut(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let label_logit = row[label];
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        // log-sum-exp form keeps the loss finite even when the label's probability underflows
        total += max + sum.ln() - label_logit;
    }
    Ok((total / dims.batch as f64, probs))
}

/// `(probs - onehot(label)) / batch`.
pub fn softmax_xent_backward(probs: &Tensor4, labels: &[usize]) -> Result<Tensor4> {
    let dims = probs.dims();
    check_labels(dims.batch, dims.item_len(), labels)?;
    let scale = 1.0 / dims.batch as f64;
    let mut d = probs.scale(scale);
    for (b, &label) in labels.iter().enumerate() {
        d.item_mut(b)[label] -= scale;
    }
    Ok(d)
}
