use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, Scalar, Tensor};

/// Glorot-uniform matrix: entries uniform on `[-b, b]` with
/// `b = sqrt(6 / (fan_in + fan_out))`.
///
/// For a 2-d shape `[out, in]` the fans are `in` and `out`; a 1-d shape
/// `[n]` is treated as `[n, 1]`.
pub fn glorot_init<T: Scalar>(shape: &[usize], seed: u64) -> Result<Tensor<T>, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    glorot_with(shape, &mut rng)
}

pub fn glorot_bound(shape: &[usize]) -> f64 {
    let (fan_out, fan_in) = fans(shape);
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, 1),
        [out, rest @ ..] => (*out, rest.iter().product()),
        [] => (0, 0),
    }
}

pub(crate) fn glorot_with<T: Scalar>(
    shape: &[usize],
    rng: &mut impl Rng,
) -> Result<Tensor<T>, NumericsError> {
    let mut t = Tensor::zeros(shape)?;
    let b = glorot_bound(shape);
    for x in t.data_mut() {
        *x = T::from_f64_lossy(rng.random_range(-b..=b));
    }
    Ok(t)
}

/// Zero bias vector.
pub fn zero_bias<T: Scalar>(len: usize) -> Result<Tensor<T>, NumericsError> {
    Tensor::zeros(&[len])
}

/// LSTM bias for gates laid out as `[input, forget, cell, output]`, each of
/// width `hidden`: zero except the forget block, which is one.
pub fn lstm_bias<T: Scalar>(hidden: usize) -> Result<Tensor<T>, NumericsError> {
    let mut t = Tensor::zeros(&[4 * hidden])?;
    for x in &mut t.data_mut()[hidden..2 * hidden] {
        *x = T::one();
    }
    Ok(t)
}
