use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::discriminator::Standardizer;
use crate::fingerprint::{FeatureVector, N_FEATURES};

/// Principal-component projection of standardized fingerprints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub standardizer: Standardizer,
    /// Unit-length component loadings, ordered by decreasing eigenvalue.
    pub components: Vec<FeatureVector>,
    pub eigenvalues: Vec<f64>,
    /// Fraction of total variance carried by each returned component.
    pub explained_variance: Vec<f64>,
    /// One row per input point, `k` columns.
    pub coordinates: Vec<Vec<f64>>,
}

impl PcaProjection {
    pub fn project(&self, point: &FeatureVector) -> Vec<f64> {
        let z = self.standardizer.transform(point);
        self.components
            .iter()
            .map(|c| c.iter().zip(&z).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Standardizes columns, eigendecomposes the sample covariance and keeps
/// the top `k` eigenvectors. Each component's largest-magnitude loading is
/// made positive.
pub fn pca_project(points: &[FeatureVector], k: usize) -> Result<PcaProjection, MetricsError> {
    if points.len() < 2 {
        return Err(MetricsError::TooFewPoints(points.len()));
    }
    if k == 0 || k > N_FEATURES {
        return Err(MetricsError::InvalidComponents(k));
    }
    let standardizer = Standardizer::fit(points).expect("at least two rows");
    let z: Vec<FeatureVector> = points.iter().map(|p| standardizer.transform(p)).collect();
    let n = z.len();
    let zm = DMatrix::from_fn(n, N_FEATURES, |r, c| z[r][c]);
    let cov = (zm.transpose() * &zm) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..N_FEATURES).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let col = eig.eigenvectors.column(idx);
        let mut v: FeatureVector = std::array::from_fn(|i| col[i]);
        let pivot = v
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| {
                if x.abs() > best.1.abs() {
                    (i, x)
                } else {
                    best
                }
            });
        if pivot.1 < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let lambda = eig.eigenvalues[idx].max(0.0);
        components.push(v);
        eigenvalues.push(lambda);
        explained.push(if total > 0.0 { lambda / total } else { 0.0 });
    }

    let coordinates = z
        .iter()
        .map(|row| {
            components
                .iter()
                .map(|c| c.iter().zip(row).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();

    Ok(PcaProjection {
        standardizer,
        components,
        eigenvalues,
        explained_variance: explained,
        coordinates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn points_on_a_line_are_rank_one() {
        let dir: FeatureVector = std::array::from_fn(|i| (i as f64 + 1.0).sin());
        let pts: Vec<FeatureVector> = (0..12)
            .map(|t| std::array::from_fn(|i| 3.0 + t as f64 * 0.7 * dir[i]))
            .collect();
        let p = pca_project(&pts, 2).unwrap();
        assert!(p.explained_variance[0] >= 0.999, "{:?}", p.explained_variance);
    }

    #[test]
    fn full_basis_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<FeatureVector> = (0..25)
            .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
            .collect();
        let p = pca_project(&pts, N_FEATURES).unwrap();
        let total: f64 = p.explained_variance.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for (pt, coords) in pts.iter().zip(&p.coordinates) {
            let z = p.standardizer.transform(pt);
            for i in 0..N_FEATURES {
                let back: f64 = p.components.iter().zip(coords).map(|(c, a)| c[i] * a).sum();
                assert!((back - z[i]).abs() < 1e-9);
            }
        }
        for c in &p.components {
            let (_, big) = c.iter().fold((0.0f64, 0.0f64), |(m, v), x| {
                if x.abs() > m { (x.abs(), *x) } else { (m, v) }
            });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(pca_project(&[[0.0; N_FEATURES]], 2).is_err());
        assert!(pca_project(&[[0.0; N_FEATURES], [1.0; N_FEATURES]], 0).is_err());
        assert!(pca_project(&[[0.0; N_FEATURES], [1.0; N_FEATURES]], 20).is_err());
        // Rank-deficient input is fine.
        let p = pca_project(&[[0.0; N_FEATURES], [1.0; N_FEATURES]], 3).unwrap();
        assert_eq!(p.coordinates.len(), 2);
    }
}
