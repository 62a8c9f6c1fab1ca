//! Imputation error and prediction quality scores.

use crate::error::MetricError;

/// Equal-length, non-empty actual/predicted vectors.
#[derive(Debug, Clone, Copy)]
pub struct PairedValues<'a> {
    actual: &'a [f64],
    predicted: &'a [f64],
}

impl<'a> PairedValues<'a> {
    pub fn new(actual: &'a [f64], predicted: &'a [f64]) -> Result<Self, MetricError> {
        if actual.len() != predicted.len() {
            return Err(MetricError::LengthMismatch {
                actual: actual.len(),
                predicted: predicted.len(),
            });
        }
        if actual.is_empty() {
            return Err(MetricError::Empty);
        }
        Ok(PairedValues { actual, predicted })
    }

    pub fn len(&self) -> usize {
        self.actual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actual.is_empty()
    }

    fn ssr(&self) -> f64 {
        self.actual
            .iter()
            .zip(self.predicted)
            .map(|(a, p)| (a - p) * (a - p))
            .sum()
    }
}

/// Root mean squared error over all pairs.
pub fn rmse(p: PairedValues<'_>) -> f64 {
    (p.ssr() / p.len() as f64).sqrt()
}

/// Coefficient of determination `1 - SSR/SSt`.
pub fn r2(p: PairedValues<'_>) -> Result<f64, MetricError> {
    if p.len() < 2 {
        return Err(MetricError::TooShort);
    }
    let mean = p.actual.iter().sum::<f64>() / p.len() as f64;
    let sst: f64 = p.actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if sst == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok(1.0 - p.ssr() / sst)
}

/// Convenience wrappers taking raw slices.
pub fn rmse_of(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricError> {
    PairedValues::new(actual, predicted).map(rmse)
}

pub fn r2_of(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricError> {
    r2(PairedValues::new(actual, predicted)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse_of(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(rmse_of(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((rmse_of(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
        assert!((2.5f64.sqrt() - 1.58114).abs() < 1e-5);
        assert_eq!(rmse_of(&[], &[]), Err(MetricError::Empty));
        assert!(matches!(
            rmse_of(&[1.0], &[1.0, 2.0]),
            Err(MetricError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn r2_examples() {
        assert_eq!(r2_of(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r2_of(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r2_of(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap(), 0.5);
        assert_eq!(r2_of(&[4.0, 4.0], &[1.0, 2.0]), Err(MetricError::ZeroVariance));
        assert_eq!(r2_of(&[4.0], &[1.0]), Err(MetricError::TooShort));
    }

    proptest! {
        #[test]
        fn rmse_symmetric_and_permutation_invariant(
            v in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..40),
            c in -10.0f64..10.0,
        ) {
            let a: Vec<f64> = v.iter().map(|x| x.0).collect();
            let b: Vec<f64> = v.iter().map(|x| x.1).collect();
            let ab = rmse_of(&a, &b).unwrap();
            prop_assert!((ab - rmse_of(&b, &a).unwrap()).abs() < 1e-12);
            let (ra, rb): (Vec<f64>, Vec<f64>) = (a.iter().rev().copied().collect(), b.iter().rev().copied().collect());
            prop_assert!((ab - rmse_of(&ra, &rb).unwrap()).abs() < 1e-9);
            let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
            prop_assert!((rmse_of(&a, &shifted).unwrap() - c.abs()).abs() < 1e-9);
        }

        #[test]
        fn r2_never_exceeds_one(
            v in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..40),
        ) {
            let a: Vec<f64> = v.iter().map(|x| x.0).collect();
            let b: Vec<f64> = v.iter().map(|x| x.1).collect();
            if let Ok(r) = r2_of(&a, &b) {
                prop_assert!(r <= 1.0);
            }
        }
    }
}
