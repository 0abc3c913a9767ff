//! Weight initialization.

use super::{Real, Tensor};
use crate::rng::Rng;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))` for a `[fan_in × fan_out]` matrix.
pub fn glorot_uniform<R: Real>(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<R> {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(&[fan_in, fan_out], |_| R::from_f64(rng.uniform_in(-bound, bound)))
}
