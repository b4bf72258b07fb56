//! Softmax and cross-entropy.

use crate::real::Real;
use crate::{Error, Result};

/// Numerically stable softmax (max subtraction).
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[target]` and its gradient `softmax - onehot`.
pub fn cross_entropy<T: Real>(logits: &[T], target: usize) -> Result<(T, Vec<T>)> {
    if target >= logits.len() {
        return Err(Error::Data(format!(
            "target class {target} outside [0, {})",
            logits.len()
        )));
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln() + m;
    let loss = lse - logits[target];
    let mut grad = softmax(logits);
    grad[target] = grad[target] - T::one();
    Ok((loss, grad))
}

/// Batch-mean cross-entropy over rows of logits.
pub fn mean_cross_entropy<T: Real>(logits: &[Vec<T>], targets: &[usize]) -> Result<T> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::Shape(format!(
            "{} logit rows vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut total = T::zero();
    for (row, &t) in logits.iter().zip(targets) {
        total += cross_entropy(row, t)?.0;
    }
    Ok(total / T::from_usize(targets.len()).unwrap())
}

/// Index of the largest probability; ties go to the lower index.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0f64, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let big = softmax(&[1000.0f32, 999.0]);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, g) = cross_entropy(&[0.0f64, 0.0], 1).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g, vec![0.5, -0.5]);
        let (l, _) = cross_entropy(&[0.0f64; 5], 3).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-15);
        assert!((l - 1.6094).abs() < 1e-4);
        assert!(cross_entropy(&[0.0f64; 2], 2).is_err());
        let mut prev = 0.0;
        for margin in 0..40 {
            let (l, _) = cross_entropy(&[margin as f64, 0.0], 1).unwrap();
            assert!(l > prev);
            prev = l;
        }
    }

    #[test]
    fn argmax_tie_goes_low() {
        assert_eq!(argmax(&[0.5f64, 0.5]), 0);
        // zero-based class 2 is score 3
        assert_eq!(argmax(&[0.1f64, 0.2, 0.3, 0.25, 0.15]), 2);
        assert_eq!(argmax(&[0.1f64, 0.2, 0.25, 0.3, 0.15]), 3);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in proptest::collection::vec(-30.0f64..30.0, 2..8), c in -50.0f64..50.0
        ) {
            let p = softmax(&logits);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
            for (a, b) in p.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
