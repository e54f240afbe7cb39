//! Deviation metrics used to compare engine output against the dense
//! reference.

use crate::tensor::FeatureTensor;

const TINY: f64 = 1e-12;

/// Largest element-wise absolute difference, scaled by the max-norm of the
/// reference tensor. Well-defined for near-zero references.
pub fn max_relative_deviation(actual: &FeatureTensor, reference: &FeatureTensor) -> f64 {
    assert_eq!(actual.shape(), reference.shape(), "deviation of mismatched shapes");
    let mut max_abs_diff = 0.0f64;
    let mut max_abs_ref = 0.0f64;
    for (&a, &r) in actual.data().iter().zip(reference.data()) {
        max_abs_diff = max_abs_diff.max((a as f64 - r as f64).abs());
        max_abs_ref = max_abs_ref.max((r as f64).abs());
    }
    max_abs_diff / max_abs_ref.max(TINY)
}

/// Sum of absolute differences over the sum of absolute reference values.
pub fn mean_relative_deviation(actual: &FeatureTensor, reference: &FeatureTensor) -> f64 {
    assert_eq!(actual.shape(), reference.shape(), "deviation of mismatched shapes");
    let mut sum_diff = 0.0f64;
    let mut sum_ref = 0.0f64;
    for (&a, &r) in actual.data().iter().zip(reference.data()) {
        sum_diff += (a as f64 - r as f64).abs();
        sum_ref += (r as f64).abs();
    }
    sum_diff / sum_ref.max(TINY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn zero_deviation_for_identical_tensors() {
        let t = FeatureTensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        assert_eq!(max_relative_deviation(&t, &t), 0.0);
        assert_eq!(mean_relative_deviation(&t, &t), 0.0);
    }

    #[test]
    fn deviation_scales_by_reference_norm() {
        let a = FeatureTensor::from_vec(Shape::new(1, 1, 1, 2), vec![10.1, 0.0]).unwrap();
        let r = FeatureTensor::from_vec(Shape::new(1, 1, 1, 2), vec![10.0, 0.0]).unwrap();
        assert!((max_relative_deviation(&a, &r) - 0.01).abs() < 1e-6);
    }
}
