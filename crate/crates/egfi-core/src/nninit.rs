//! Parameter initialization helpers shared by the encoder, fusion head and
//! language model.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Xavier/Glorot uniform: U(+-sqrt(6 / (fan_in + fan_out))).
pub fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, rows, cols, bound)
}

/// U(-bound, +bound).
pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

pub fn zeros(rows: usize, cols: usize) -> Array2<f64> {
    Array2::zeros((rows, cols))
}

pub fn ones(rows: usize, cols: usize) -> Array2<f64> {
    Array2::ones((rows, cols))
}
