//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Glorot/Xavier uniform for a `fan_in × fan_out` weight matrix.
pub fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::lit(rng.random_range(-limit..=limit)))
        .collect();
    Tensor::new(&[fan_in, fan_out], data).expect("xavier shape")
}

/// Normal(0, std) table, used for embeddings.
pub fn normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("normal shape")
}

pub fn zeros<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape)
}

pub fn ones<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::full(shape, T::one())
}
