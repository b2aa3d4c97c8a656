//! Xavier (Glorot) uniform initialization.

use rand::Rng;

use crate::neural::tensor::{Scalar, Tensor};

/// Uniform samples on [-b, b] with b = sqrt(6 / (fan_in + fan_out)).
/// Sampling happens in f64 so a given seed yields the same values (up to
/// rounding) in both working precisions.
pub fn xavier_uniform<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::of(rng.gen_range(-bound..=bound));
    }
    t
}

/// Xavier bound for the given fans.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn samples_respect_bound() {
        let mut rng = stream(3, &[]);
        let t: Tensor<f64> = xavier_uniform(&[64, 64], 64, 64, &mut rng);
        let b = xavier_bound(64, 64);
        assert!(t.iter().all(|v| v.abs() <= b));
    }

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f32> = xavier_uniform(&[10, 10], 10, 10, &mut stream(9, &[1]));
        let b: Tensor<f32> = xavier_uniform(&[10, 10], 10, 10, &mut stream(9, &[1]));
        assert_eq!(a, b);
    }

    #[test]
    fn large_sample_mean_near_zero() {
        let mut rng = stream(12, &[]);
        let t: Tensor<f64> = xavier_uniform(&[100_000], 128, 128, &mut rng);
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.002, "mean {mean}");
    }
}
