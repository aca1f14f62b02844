use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Kaiming-uniform initialisation for ReLU stacks: `U(-b, b)` with
/// `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Scalar>(dims: impl Into<Vec<usize>>, fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(dims, |_| T::of(rng.gen_range(-bound..bound)))
}
