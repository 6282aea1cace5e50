use serde::{Deserialize, Serialize};

use super::DiscriminatorError;
use crate::fingerprint::{FeatureVector, N_FEATURES};

/// Per-feature z-scoring with population statistics. Columns that are
/// constant on the fitting data keep std 1 so they map to 0 instead of NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: FeatureVector,
    pub std: FeatureVector,
}

impl Standardizer {
    pub fn fit(rows: &[FeatureVector]) -> Result<Self, DiscriminatorError> {
        if rows.len() < 2 {
            return Err(DiscriminatorError::TooFewRows(rows.len()));
        }
        let n = rows.len() as f64;
        let mean: FeatureVector =
            std::array::from_fn(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n);
        let std: FeatureVector = std::array::from_fn(|c| {
            let var = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        });
        Ok(Standardizer { mean, std })
    }

    pub fn identity() -> Self {
        Standardizer {
            mean: [0.0; N_FEATURES],
            std: [1.0; N_FEATURES],
        }
    }

    pub fn transform(&self, v: &FeatureVector) -> FeatureVector {
        std::array::from_fn(|i| (v[i] - self.mean[i]) / self.std[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_row_hand_case() {
        let s = Standardizer::fit(&[[0.0; N_FEATURES], [2.0; N_FEATURES]]).unwrap();
        assert_eq!(s.mean, [1.0; N_FEATURES]);
        assert_eq!(s.std, [1.0; N_FEATURES]);
    }

    #[test]
    fn constant_column_gets_unit_std() {
        let mut a = [1.0; N_FEATURES];
        let mut b = [1.0; N_FEATURES];
        a[0] = 0.0;
        b[0] = 4.0;
        let s = Standardizer::fit(&[a, b]).unwrap();
        assert_eq!(s.std[0], 2.0);
        assert_eq!(s.std[1], 1.0);
        assert_eq!(s.transform(&a)[1], 0.0);
    }

    #[test]
    fn needs_two_rows() {
        assert!(matches!(
            Standardizer::fit(&[[0.0; N_FEATURES]]),
            Err(DiscriminatorError::TooFewRows(1))
        ));
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<FeatureVector> = (0..40)
            .map(|_| std::array::from_fn(|i| rng.random_range(-3.0..3.0) * (i + 1) as f64 + i as f64))
            .collect();
        let s = Standardizer::fit(&rows).unwrap();
        let z: Vec<FeatureVector> = rows.iter().map(|r| s.transform(r)).collect();
        for c in 0..N_FEATURES {
            let m = z.iter().map(|r| r[c]).sum::<f64>() / z.len() as f64;
            let v = z.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / z.len() as f64;
            assert!(m.abs() < 1e-9);
            assert!((v.sqrt() - 1.0).abs() < 1e-9);
        }
    }
}
