//! Weight initialization: scaled uniform (Glorot-style) draws.

use ndarray::{Array1, Array2};
use rand::Rng;

/// Uniform init on `[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`.
pub fn scaled_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..=bound))
}

pub fn zeros1(n: usize) -> Array1<f64> {
    Array1::zeros(n)
}
