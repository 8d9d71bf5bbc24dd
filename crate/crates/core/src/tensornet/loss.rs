//! Losses averaged over the batch, each returning the loss and its gradient
//! with respect to the prediction.

use super::layers::softmax_slice;
use super::tensor::{Scalar, Tensor};
use super::NetError;

/// Probability clamp for binary cross-entropy.
const BCE_CLAMP: f64 = 1e-7;

/// Mean squared error over every element.
pub fn mse<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<(S, Tensor<S>), NetError> {
    if pred.shape() != target.shape() {
        return Err(NetError::ShapeMismatch(format!(
            "mse: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = S::lit(pred.len().max(1) as f64);
    let two = S::lit(2.0);
    let mut loss = S::zero();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss = loss + d * d;
            two * d / n
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Softmax cross-entropy from (N, C) logits.
pub fn cross_entropy<S: Scalar>(
    logits: &Tensor<S>,
    classes: &[usize],
) -> Result<(S, Tensor<S>), NetError> {
    if logits.shape().len() != 2 || logits.batch() != classes.len() {
        return Err(NetError::ShapeMismatch(format!(
            "cross entropy: logits {:?} with {} labels",
            logits.shape(),
            classes.len()
        )));
    }
    let c = logits.shape()[1];
    let n = S::lit(classes.len().max(1) as f64);
    let mut grad = vec![S::zero(); logits.len()];
    let mut loss = S::zero();
    for ((row, g), &class) in logits.data().chunks(c).zip(grad.chunks_mut(c)).zip(classes) {
        if class >= c {
            return Err(NetError::InvalidClass { class, classes: c });
        }
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        loss = loss + lse - row[class];
        softmax_slice(row, g);
        g[class] = g[class] - S::one();
        g.iter_mut().for_each(|v| *v = *v / n);
    }
    Ok((loss / n, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Binary cross-entropy on probabilities; `labels` are 0 or 1 per element.
pub fn binary_cross_entropy<S: Scalar>(
    prob: &Tensor<S>,
    labels: &[S],
) -> Result<(S, Tensor<S>), NetError> {
    if prob.len() != labels.len() {
        return Err(NetError::ShapeMismatch(format!(
            "bce: {} predictions, {} labels",
            prob.len(),
            labels.len()
        )));
    }
    let n = S::lit(labels.len().max(1) as f64);
    let lo = S::lit(BCE_CLAMP);
    let hi = S::one() - lo;
    let mut loss = S::zero();
    let grad = prob
        .data()
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let q = p.max(lo).min(hi);
            loss = loss - (y * q.ln() + (S::one() - y) * (S::one() - q).ln());
            if p > lo && p < hi {
                (q - y) / (q * (S::one() - q)) / n
            } else {
                S::zero()
            }
        })
        .collect();
    Ok((loss / n, Tensor::new(prob.shape().to_vec(), grad)?))
}
