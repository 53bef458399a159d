use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of Kaiming-normal weights feeding a leaky ReLU.
pub fn kaiming_std(fan_in: usize, negative_slope: f64) -> f64 {
    let fan_in = fan_in.max(1) as f64;
    num_traits::Float::sqrt(2.0 / ((1.0 + negative_slope * negative_slope) * fan_in))
}

/// i.i.d. `N(0, 2 / ((1 + slope²) · fan_in))` entries.
pub fn kaiming_normal<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    negative_slope: f64,
    rng: &mut R,
) -> Tensor<T> {
    let dist = Normal::new(0.0, kaiming_std(fan_in, negative_slope)).expect("finite std");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
}

/// i.i.d. standard normal entries; the latent prior.
pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        T::from_f64_lossy(v)
    })
}
