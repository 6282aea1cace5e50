//! Scoring math: human-likeness, Chamfer coverage, combined fitness, the
//! coverage-weight schedule, per-dimension Dice alignment and PCA.

mod pca;

pub use pca::{pca_project, PcaProjection};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discriminator::Standardizer;
use crate::fingerprint::{Dimension, FeatureVector, N_FEATURES};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot average an empty probability list")]
    EmptyProbabilities,
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("reference scale needs at least 2 points, got {0}")]
    TooFewReferencePoints(usize),
    #[error("reference points are all identical; coverage scale is zero")]
    ZeroScale,
    #[error("n_current {current} must lie in 1..={terminal}")]
    InvalidSchedule { current: usize, terminal: usize },
    #[error("weights {0} + {1} do not sum to 1")]
    WeightSum(f64, f64),
    #[error("PCA needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("PCA output dimension {0} outside 1..=19")]
    InvalidComponents(usize),
}

/// Mean of per-episode human probabilities.
pub fn human_likeness(probs: &[f64]) -> Result<f64, MetricsError> {
    if probs.is_empty() {
        return Err(MetricsError::EmptyProbabilities);
    }
    if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(MetricsError::ProbabilityOutOfRange(p));
    }
    Ok(probs.iter().sum::<f64>() / probs.len() as f64)
}

pub fn euclidean(a: &FeatureVector, b: &FeatureVector) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean over `from` of the distance to the nearest point of `to`.
pub fn one_sided_chamfer(from: &[FeatureVector], to: &[FeatureVector]) -> f64 {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| euclidean(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / from.len() as f64
}

/// Two-sided Chamfer error: H→F nearest-neighbour mean plus F→H.
pub fn chamfer_error(
    personas: &[FeatureVector],
    humans: &[FeatureVector],
) -> Result<f64, MetricsError> {
    if personas.is_empty() || humans.is_empty() {
        return Err(MetricsError::EmptyPointSet);
    }
    Ok(one_sided_chamfer(humans, personas) + one_sided_chamfer(personas, humans))
}

/// Mean Euclidean distance over all unordered pairs of distinct indices.
pub fn reference_scale(points: &[FeatureVector]) -> Result<f64, MetricsError> {
    let n = points.len();
    if n < 2 {
        return Err(MetricsError::TooFewReferencePoints(n));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += euclidean(&points[i], &points[j]);
        }
    }
    let d = sum / (n * (n - 1) / 2) as f64;
    if d > 0.0 {
        Ok(d)
    } else {
        Err(MetricsError::ZeroScale)
    }
}

/// `max(0, 1 - min(1, err / (2 d_ref)))`.
pub fn coverage_from_error(err: f64, d_ref: f64) -> f64 {
    (1.0 - (err / (2.0 * d_ref)).min(1.0)).max(0.0)
}

pub fn coverage_score(
    personas: &[FeatureVector],
    humans: &[FeatureVector],
    d_ref: f64,
) -> Result<f64, MetricsError> {
    if d_ref <= 0.0 {
        return Err(MetricsError::ZeroScale);
    }
    Ok(coverage_from_error(chamfer_error(personas, humans)?, d_ref))
}

/// Returns `(lambda_h, lambda_b)` with `lambda_b = 0.5 * n_current / n_terminal`.
pub fn lambda_schedule(n_current: usize, n_terminal: usize) -> Result<(f64, f64), MetricsError> {
    if n_current == 0 || n_current > n_terminal {
        return Err(MetricsError::InvalidSchedule {
            current: n_current,
            terminal: n_terminal,
        });
    }
    let lambda_b = 0.5 * (n_current as f64 / n_terminal as f64);
    Ok((1.0 - lambda_b, lambda_b))
}

pub fn combined_score(hl: f64, cov: f64, lambda_h: f64, lambda_b: f64) -> Result<f64, MetricsError> {
    if (lambda_h + lambda_b - 1.0).abs() > 1e-9 || lambda_h < 0.0 || lambda_b < 0.0 {
        return Err(MetricsError::WeightSum(lambda_h, lambda_b));
    }
    Ok(lambda_h * hl + lambda_b * cov)
}

/// Per-feature min/max used to map fingerprints onto [0, 1] before Dice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub min: FeatureVector,
    pub max: FeatureVector,
}

impl NormalizationBounds {
    pub fn fit(points: &[FeatureVector]) -> Result<Self, MetricsError> {
        if points.is_empty() {
            return Err(MetricsError::EmptyPointSet);
        }
        let mut min = [f64::INFINITY; N_FEATURES];
        let mut max = [f64::NEG_INFINITY; N_FEATURES];
        for p in points {
            for i in 0..N_FEATURES {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        Ok(NormalizationBounds { min, max })
    }

    /// Identity bounds: values are only clamped to [0, 1].
    pub fn unit() -> Self {
        NormalizationBounds {
            min: [0.0; N_FEATURES],
            max: [1.0; N_FEATURES],
        }
    }

    /// Min–max normalizes and clamps to [0, 1]. A feature with zero range
    /// contributes its raw value clamped to [0, 1].
    pub fn normalize(&self, v: &FeatureVector) -> FeatureVector {
        std::array::from_fn(|i| {
            let range = self.max[i] - self.min[i];
            let x = if range > 0.0 {
                (v[i] - self.min[i]) / range
            } else {
                v[i]
            };
            x.clamp(0.0, 1.0)
        })
    }
}

/// `2 Σ min(x, y) / (Σ x + Σ y)` over nonnegative vectors; 1 when both
/// sums are zero.
pub fn dice(x: &[f64], y: &[f64]) -> f64 {
    let overlap: f64 = x.iter().zip(y).map(|(a, b)| a.min(*b)).sum();
    let total: f64 = x.iter().sum::<f64>() + y.iter().sum::<f64>();
    if total == 0.0 {
        1.0
    } else {
        2.0 * overlap / total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiceScores {
    pub dims: [f64; 4],
    pub usi: f64,
}

pub fn dice_alignment(
    mean_gen: &FeatureVector,
    mu_h: &FeatureVector,
    bounds: &NormalizationBounds,
) -> DiceScores {
    let x = bounds.normalize(mean_gen);
    let y = bounds.normalize(mu_h);
    let dims = Dimension::ALL.map(|d| dice(&x[d.range()], &y[d.range()]));
    DiceScores {
        dims,
        usi: dims.iter().sum::<f64>() / 4.0,
    }
}

pub fn mean_vector(points: &[FeatureVector]) -> Option<FeatureVector> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    Some(std::array::from_fn(|i| {
        points.iter().map(|p| p[i]).sum::<f64>() / n
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageSpace {
    /// Distances on raw fingerprints.
    #[default]
    Raw,
    /// Distances after z-scoring with statistics of the reference cloud.
    Standardized,
}

/// Reference statistics from the human calibration corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanReference {
    /// Reference cloud in raw fingerprint space.
    pub fingerprints: Vec<FeatureVector>,
    pub mu_h: FeatureVector,
    /// Mean pairwise distance in `space`.
    pub d_ref: f64,
    pub bounds: NormalizationBounds,
    pub space: CoverageSpace,
    pub standardizer: Standardizer,
}

impl HumanReference {
    pub fn build(fingerprints: Vec<FeatureVector>, space: CoverageSpace) -> Result<Self, MetricsError> {
        if fingerprints.len() < 2 {
            return Err(MetricsError::TooFewReferencePoints(fingerprints.len()));
        }
        let standardizer =
            Standardizer::fit(&fingerprints).map_err(|_| MetricsError::TooFewReferencePoints(fingerprints.len()))?;
        let mu_h = mean_vector(&fingerprints).expect("nonempty");
        let bounds = NormalizationBounds::fit(&fingerprints)?;
        let mut reference = HumanReference {
            fingerprints,
            mu_h,
            d_ref: 0.0,
            bounds,
            space,
            standardizer,
        };
        reference.d_ref = reference_scale(&reference.project(&reference.fingerprints))?;
        Ok(reference)
    }

    /// Maps raw fingerprints into the coverage space.
    pub fn project(&self, points: &[FeatureVector]) -> Vec<FeatureVector> {
        match self.space {
            CoverageSpace::Raw => points.to_vec(),
            CoverageSpace::Standardized => points.iter().map(|p| self.standardizer.transform(p)).collect(),
        }
    }

    pub fn chamfer(&self, personas: &[FeatureVector]) -> Result<f64, MetricsError> {
        chamfer_error(&self.project(personas), &self.project(&self.fingerprints))
    }

    pub fn coverage(&self, personas: &[FeatureVector]) -> Result<f64, MetricsError> {
        Ok(coverage_from_error(self.chamfer(personas)?, self.d_ref))
    }

    pub fn dice(&self, mean_gen: &FeatureVector) -> DiceScores {
        dice_alignment(mean_gen, &self.mu_h, &self.bounds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCoverage {
    pub task_id: String,
    pub chamfer_error: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub n_personas: usize,
    pub episode_ids: Vec<String>,
    pub probabilities: Vec<f64>,
    pub hl_mean: f64,
    pub task_coverage: Vec<TaskCoverage>,
    pub cov_mean: f64,
    pub lambda_h: f64,
    pub lambda_b: f64,
    pub score: f64,
    pub dice: DiceScores,
}

impl FitnessReport {
    /// Aggregates per-episode probabilities and per-task coverage into a
    /// report; `score` is always recomputed from the stored components.
    pub fn assemble(
        n_personas: usize,
        episode_ids: Vec<String>,
        probabilities: Vec<f64>,
        task_coverage: Vec<TaskCoverage>,
        (lambda_h, lambda_b): (f64, f64),
        dice: DiceScores,
    ) -> Result<Self, MetricsError> {
        let hl_mean = human_likeness(&probabilities)?;
        if task_coverage.is_empty() {
            return Err(MetricsError::EmptyPointSet);
        }
        let cov_mean =
            task_coverage.iter().map(|t| t.coverage).sum::<f64>() / task_coverage.len() as f64;
        let score = combined_score(hl_mean, cov_mean, lambda_h, lambda_b)?;
        Ok(FitnessReport {
            n_personas,
            episode_ids,
            probabilities,
            hl_mean,
            task_coverage,
            cov_mean,
            lambda_h,
            lambda_b,
            score,
            dice,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pad(head: &[f64]) -> FeatureVector {
        let mut v = [0.0; N_FEATURES];
        v[..head.len()].copy_from_slice(head);
        v
    }

    #[test]
    fn human_likeness_cases() {
        assert_eq!(human_likeness(&[1.0, 0.0]), Ok(0.5));
        assert_eq!(human_likeness(&[0.3; 7]).unwrap(), 0.3 * 7.0 / 7.0);
        assert_eq!(human_likeness(&[]), Err(MetricsError::EmptyProbabilities));
        assert!(human_likeness(&[1.5]).is_err());
    }

    #[test]
    fn chamfer_hand_cases() {
        let h = vec![pad(&[1.0, 2.0]), pad(&[3.0])];
        assert_eq!(chamfer_error(&h, &h), Ok(0.0));
        assert_eq!(chamfer_error(&[pad(&[0.0])], &[pad(&[3.0])]), Ok(6.0));
        assert_eq!(chamfer_error(&[], &h), Err(MetricsError::EmptyPointSet));
    }

    #[test]
    fn reference_scale_cases() {
        assert_eq!(reference_scale(&[pad(&[0.0]), pad(&[2.0])]), Ok(2.0));
        let d = reference_scale(&[pad(&[0.0]), pad(&[1.0]), pad(&[2.0])]).unwrap();
        assert!((d - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(reference_scale(&[pad(&[1.0]); 3]), Err(MetricsError::ZeroScale));
        assert_eq!(
            reference_scale(&[pad(&[1.0])]),
            Err(MetricsError::TooFewReferencePoints(1))
        );
    }

    #[test]
    fn coverage_closed_form() {
        let h = vec![pad(&[0.0]), pad(&[2.0])];
        assert_eq!(coverage_score(&h, &h, 2.0), Ok(1.0));
        assert_eq!(coverage_from_error(4.0, 2.0), 0.0);
        assert_eq!(coverage_from_error(9.0, 2.0), 0.0);
        assert_eq!(coverage_from_error(2.0, 2.0), 0.5);
        assert!(coverage_score(&h, &h, 0.0).is_err());
    }

    #[test]
    fn lambda_schedule_cases() {
        assert_eq!(lambda_schedule(10, 10), Ok((0.5, 0.5)));
        assert_eq!(lambda_schedule(5, 10), Ok((0.75, 0.25)));
        assert!(lambda_schedule(11, 10).is_err());
        assert!(lambda_schedule(0, 10).is_err());
        for t in 1..=12 {
            for c in 1..=t {
                let (h, b) = lambda_schedule(c, t).unwrap();
                assert!((h + b - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn combined_score_cases() {
        assert!((combined_score(0.107, 0.046, 0.5, 0.5).unwrap() - 0.0765).abs() < 1e-12);
        assert!((combined_score(0.958, 0.623, 0.5, 0.5).unwrap() - 0.7905).abs() < 1e-12);
        assert_eq!(combined_score(0.4, 0.4, 0.75, 0.25), Ok(0.4));
        assert!(combined_score(0.4, 0.4, 0.7, 0.2).is_err());
    }

    #[test]
    fn dice_hand_cases() {
        assert_eq!(dice(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((dice(&[0.5, 0.5], &[1.0, 1.0]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn dice_identity_gives_one() {
        let bounds = NormalizationBounds::fit(&[pad(&[0.0; 19]), [3.0; N_FEATURES]]).unwrap();
        let v: FeatureVector = std::array::from_fn(|i| (i % 4) as f64 * 0.7);
        let s = dice_alignment(&v, &v, &bounds);
        assert_eq!(s.dims, [1.0; 4]);
        assert_eq!(s.usi, 1.0);
    }

    #[test]
    fn degenerate_bound_uses_clamped_raw_value() {
        let bounds = NormalizationBounds::fit(&[[2.0; N_FEATURES], [2.0; N_FEATURES]]).unwrap();
        let n = bounds.normalize(&pad(&[0.25, 7.0, -1.0]));
        assert_eq!(&n[..3], &[0.25, 1.0, 0.0]);
    }

    #[test]
    fn human_reference_self_coverage_is_one() {
        let pts = vec![pad(&[0.0, 1.0]), pad(&[2.0, 0.0]), pad(&[1.0, 1.0])];
        for space in [CoverageSpace::Raw, CoverageSpace::Standardized] {
            let r = HumanReference::build(pts.clone(), space).unwrap();
            assert_eq!(r.coverage(&pts), Ok(1.0));
            assert_eq!(r.dice(&r.mu_h).usi, 1.0);
        }
    }

    #[test]
    fn report_score_identity() {
        let cov = vec![
            TaskCoverage { task_id: "a".into(), chamfer_error: 1.0, coverage: 0.2 },
            TaskCoverage { task_id: "b".into(), chamfer_error: 1.0, coverage: 0.6 },
        ];
        let dice = DiceScores { dims: [1.0; 4], usi: 1.0 };
        let r = FitnessReport::assemble(
            2,
            vec!["x".into(), "y".into()],
            vec![0.3, 0.9],
            cov,
            (0.75, 0.25),
            dice,
        )
        .unwrap();
        assert!((r.hl_mean - 0.6).abs() < 1e-15);
        assert!((r.cov_mean - 0.4).abs() < 1e-15);
        assert_eq!(r.score, r.lambda_h * r.hl_mean + r.lambda_b * r.cov_mean);
    }

    fn arb_cloud(max: usize) -> impl Strategy<Value = Vec<FeatureVector>> {
        proptest::collection::vec(
            proptest::array::uniform19(-5.0f64..5.0),
            1..max,
        )
    }

    proptest! {
        #[test]
        fn adding_a_persona_never_raises_the_human_side(
            personas in arb_cloud(6),
            humans in arb_cloud(6),
            extra in proptest::array::uniform19(-5.0f64..5.0),
        ) {
            let before = one_sided_chamfer(&humans, &personas);
            let mut grown = personas.clone();
            grown.push(extra);
            prop_assert!(one_sided_chamfer(&humans, &grown) <= before);
        }

        #[test]
        fn chamfer_is_symmetric_and_coverage_clamped(
            a in arb_cloud(6),
            b in arb_cloud(6),
            d_ref in 0.01f64..20.0,
        ) {
            let ab = chamfer_error(&a, &b).unwrap();
            let ba = chamfer_error(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            let c = coverage_score(&a, &b, d_ref).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
        }

        #[test]
        fn dice_bounded_and_symmetric(
            x in proptest::array::uniform19(-1.0f64..3.0),
            y in proptest::array::uniform19(-1.0f64..3.0),
        ) {
            let bounds = NormalizationBounds::unit();
            let s = dice_alignment(&x, &y, &bounds);
            let t = dice_alignment(&y, &x, &bounds);
            for d in 0..4 {
                prop_assert!((0.0..=1.0).contains(&s.dims[d]));
                prop_assert_eq!(s.dims[d], t.dims[d]);
            }
            prop_assert!((0.0..=1.0).contains(&s.usi));
        }
    }
}
