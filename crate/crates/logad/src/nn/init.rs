//! Weight initialization helpers. Sampling happens in f64 and is cast, so a
//! given seed produces the same weights for f32 and f64 models.

use super::Scalar;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Xavier/Glorot uniform for dense weights.
pub fn xavier<F: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<F> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        F::from_f64(rng.gen_range(-bound..bound))
    })
}

/// Gaussian init, used for embedding tables and adapter A factors.
pub fn normal<F: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<F> {
    Array2::from_shape_fn((rows, cols), |_| F::from_f64(std * gauss(rng)))
}

pub fn zeros<F: Scalar>(rows: usize, cols: usize) -> Array2<F> {
    Array2::zeros((rows, cols))
}

pub fn ones<F: Scalar>(rows: usize, cols: usize) -> Array2<F> {
    Array2::from_elem((rows, cols), F::one())
}

/// Box–Muller standard normal draw.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
