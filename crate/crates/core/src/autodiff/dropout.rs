use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

/// Inverted-dropout mask: kept entries hold `1 / (1 - rate)`, dropped ones 0.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    rate: f64,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok(Tensor::ones(shape));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate)).unwrap();
    let mut mask = Tensor::zeros(shape);
    for v in mask.data_mut() {
        if rng.gen::<f64>() >= rate {
            *v = keep;
        }
    }
    Ok(mask)
}
