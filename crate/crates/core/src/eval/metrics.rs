use serde::{Deserialize, Serialize};

use super::EvalError;

/// What the `stdev` half of "RMSE +- STDEV" measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispersionMode {
    /// Sample standard deviation of `|e|`.
    #[default]
    AbsError,
    /// Sample standard deviation of the signed error.
    SignedError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub rmse: f64,
    /// Zero when `n == 1`.
    pub stdev: f64,
    pub n: usize,
}

pub fn rmse_stdev(errors: &[f64], mode: DispersionMode) -> Result<ErrorStats, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyErrors);
    }
    let n = errors.len();
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    let spread = |v: &dyn Fn(f64) -> f64| {
        if n < 2 {
            return 0.0;
        }
        let mean = errors.iter().map(|&e| v(e)).sum::<f64>() / n as f64;
        (errors.iter().map(|&e| (v(e) - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    let stdev = match mode {
        DispersionMode::AbsError => spread(&|e: f64| e.abs()),
        DispersionMode::SignedError => spread(&|e| e),
    };
    Ok(ErrorStats { rmse, stdev, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let s = rmse_stdev(&[1.0, 1.0, 1.0], DispersionMode::AbsError).unwrap();
        assert_eq!((s.rmse, s.stdev), (1.0, 0.0));
        let s = rmse_stdev(&[0.0, 3.0, 4.0], DispersionMode::AbsError).unwrap();
        assert!((s.rmse - (25.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.rmse - 2.8868).abs() < 1e-4);
        assert!((s.stdev - 2.0817).abs() < 1e-4);
        let s = rmse_stdev(&[0.0], DispersionMode::AbsError).unwrap();
        assert_eq!((s.rmse, s.stdev, s.n), (0.0, 0.0, 1));
        assert!(matches!(rmse_stdev(&[], DispersionMode::AbsError), Err(EvalError::EmptyErrors)));
    }

    #[test]
    fn signed_mode_differs_on_mixed_signs() {
        let abs = rmse_stdev(&[-1.0, 1.0], DispersionMode::AbsError).unwrap();
        let signed = rmse_stdev(&[-1.0, 1.0], DispersionMode::SignedError).unwrap();
        assert_eq!(abs.stdev, 0.0);
        assert!((signed.stdev - 2f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn scale_equivariance(errors in proptest::collection::vec(-50.0f64..50.0, 1..40), k in 0.01f64..100.0) {
            let scaled: Vec<f64> = errors.iter().map(|e| e * k).collect();
            for mode in [DispersionMode::AbsError, DispersionMode::SignedError] {
                let a = rmse_stdev(&errors, mode).unwrap();
                let b = rmse_stdev(&scaled, mode).unwrap();
                prop_assert!((b.rmse - k * a.rmse).abs() <= 1e-9 * (1.0 + b.rmse));
                prop_assert!((b.stdev - k * a.stdev).abs() <= 1e-9 * (1.0 + b.stdev));
                prop_assert!(a.rmse >= 0.0 && a.stdev >= 0.0);
            }
        }
    }
}
