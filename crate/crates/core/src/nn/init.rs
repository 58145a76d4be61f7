//! Weight initialization.

use super::Scalar;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Negative slope used by every leaky rectifier in the crate.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Kaiming-normal init matched to the leaky rectifier gain.
pub fn kaiming_normal<F: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<F> {
    let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
    let std = gain / (fan_in as f64).sqrt();
    let mut out = ArrayD::zeros(IxDyn(shape));
    for v in out.iter_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v = F::from_f64(n * std);
    }
    out
}

/// Uniform init in `[-bound, bound]`.
pub fn uniform<F: Scalar>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> ArrayD<F> {
    let mut out = ArrayD::zeros(IxDyn(shape));
    for v in out.iter_mut() {
        *v = F::from_f64(rng.random_range(-bound..=bound));
    }
    out
}
