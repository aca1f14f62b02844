use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise softmax of `[N, K]` logits, max-subtracted for stability.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.dims2("softmax")?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Tensor::new(logits.dims().to_vec(), out)
}

/// Mean cross-entropy of softmax(logits) against one-hot targets.
///
/// Returns the loss and its gradient with respect to the logits,
/// `(softmax - one_hot) / N`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, one_hot: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let [n, k] = logits.dims2("softmax_cross_entropy")?;
    if !logits.same_shape(one_hot) {
        return shape_err(
            "softmax_cross_entropy",
            format!("logits {:?} vs targets {:?}", logits.dims(), one_hot.dims()),
        );
    }
    let inv_n = T::one() / T::of(n as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(n * k);
    for (row, target) in logits.data().chunks_exact(k).zip(one_hot.data().chunks_exact(k)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        for (&v, &t) in row.iter().zip(target) {
            loss += t * (log_z - v);
            grad.push(((v - log_z).exp() - t) * inv_n);
        }
    }
    let loss = loss * inv_n;
    if !loss.is_finite() {
        return Err(crate::NeuralError::NonFinite { op: "softmax_cross_entropy" });
    }
    Ok((loss, Tensor::new([n, k], grad)?))
}

/// One-hot matrix `[labels.len(), classes]`.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Tensor<T> {
    let mut t = Tensor::zeros([labels.len().max(1), classes]);
    for (row, &label) in labels.iter().enumerate() {
        t.data_mut()[row * classes + label] = T::one();
    }
    t
}
