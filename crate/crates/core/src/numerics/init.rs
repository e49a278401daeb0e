use super::rng::{self, Rng};
use super::{Scalar, Tensor};

/// Initializer identity recorded in run metadata.
pub const XAVIER: &str = "xavier-uniform";

/// Glorot/Xavier uniform draw on `±√(6/(fan_in+fan_out))` for a `[fan_out, fan_in]` weight.
pub fn xavier_uniform<T: Scalar>(fan_out: usize, fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    assert!(fan_out >= 1 && fan_in >= 1, "xavier_uniform needs positive fans");
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_out * fan_in)
        .map(|_| T::of((2.0 * rng::unit_f64(rng) - 1.0) * bound))
        .collect();
    Tensor::from_vec(&[fan_out, fan_in], data).expect("length matches shape")
}
