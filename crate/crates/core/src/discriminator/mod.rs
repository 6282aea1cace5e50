//! Random-forest classifier estimating the probability that a fingerprint
//! comes from a human-authored episode.

mod standardizer;
mod tree;

pub use standardizer::Standardizer;
pub use tree::DecisionTree;

use std::path::Path;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{FeatureVector, N_FEATURES};
use tree::TrainParams;

pub const MODEL_FORMAT: &str = "simuser-discriminator";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DiscriminatorError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("the {0} training matrix is empty")]
    EmptyClass(&'static str),
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("ROC AUC is undefined when every label is {0}")]
    SingleClassLabels(&'static str),
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model was trained for {field} {model:?} but the data is tagged {data:?}")]
    TagMismatch {
        field: &'static str,
        model: String,
        data: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// Each class gets weight `n / (2 n_class)`.
    Balanced,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `ceil(sqrt(19))` = 5.
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self) -> usize {
        match self {
            MaxFeatures::Sqrt => (N_FEATURES as f64).sqrt().ceil() as usize,
            MaxFeatures::All => N_FEATURES,
            MaxFeatures::Fixed(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub class_weighting: ClassWeighting,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 200,
            max_depth: 12,
            class_weighting: ClassWeighting::Balanced,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 42,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), DiscriminatorError> {
        if self.n_estimators == 0 {
            return Err(DiscriminatorError::InvalidConfig("n_estimators must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(DiscriminatorError::InvalidConfig("max_depth must be >= 1".into()));
        }
        let k = self.max_features.resolve();
        if k == 0 || k > N_FEATURES {
            return Err(DiscriminatorError::InvalidConfig(format!(
                "max_features {k} outside 1..={N_FEATURES}"
            )));
        }
        Ok(())
    }
}

/// Scope of a trained model. Unset tags match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTags {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulator_model: Option<String>,
}

impl ModelTags {
    /// Fails when both sides set a tag and the values differ, unless
    /// `allow_mismatch` is set.
    pub fn check(&self, data: &ModelTags, allow_mismatch: bool) -> Result<(), DiscriminatorError> {
        if allow_mismatch {
            return Ok(());
        }
        for (field, model, other) in [
            ("domain", &self.domain, &data.domain),
            ("simulator model", &self.simulator_model, &data.simulator_model),
        ] {
            if let (Some(m), Some(d)) = (model, other) {
                if m != d {
                    return Err(DiscriminatorError::TagMismatch {
                        field,
                        model: m.clone(),
                        data: d.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub config: ForestConfig,
    pub standardizer: Standardizer,
    pub trees: Vec<DecisionTree>,
    /// `[simulator, human]`.
    pub class_weights: [f64; 2],
    pub seed: u64,
    pub tags: ModelTags,
    /// Normalized impurity-decrease importances, summing to 1.
    pub importances: FeatureVector,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    format_version: u32,
    #[serde(flatten)]
    model: Discriminator,
}

fn class_weights(n_human: usize, n_sim: usize, mode: ClassWeighting) -> [f64; 2] {
    match mode {
        ClassWeighting::Uniform => [1.0, 1.0],
        ClassWeighting::Balanced => {
            let n = (n_human + n_sim) as f64;
            [n / (2.0 * n_sim as f64), n / (2.0 * n_human as f64)]
        }
    }
}

fn normalize_importances(per_tree: &[FeatureVector]) -> FeatureVector {
    let mut acc = [0.0; N_FEATURES];
    for imp in per_tree {
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            for (a, v) in acc.iter_mut().zip(imp) {
                *a += v / total;
            }
        }
    }
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        acc.map(|v| v / total)
    } else {
        [1.0 / N_FEATURES as f64; N_FEATURES]
    }
}

impl Discriminator {
    /// Fits the standardizer on both classes together, then grows
    /// `n_estimators` trees. Tree `t` draws its bootstrap sample and split
    /// features from a generator seeded with `seed + t`, so the result does
    /// not depend on thread scheduling.
    pub fn train(
        human: &[FeatureVector],
        simulator: &[FeatureVector],
        config: &ForestConfig,
    ) -> Result<Self, DiscriminatorError> {
        config.validate()?;
        if human.is_empty() {
            return Err(DiscriminatorError::EmptyClass("human"));
        }
        if simulator.is_empty() {
            return Err(DiscriminatorError::EmptyClass("simulator"));
        }
        let all: Vec<FeatureVector> = human.iter().chain(simulator).copied().collect();
        let standardizer = Standardizer::fit(&all)?;
        let rows: Vec<FeatureVector> = all.iter().map(|r| standardizer.transform(r)).collect();
        let is_human: Vec<bool> = (0..rows.len()).map(|i| i < human.len()).collect();
        let cw = class_weights(human.len(), simulator.len(), config.class_weighting);
        let base: Vec<f64> = is_human.iter().map(|&h| if h { cw[1] } else { cw[0] }).collect();
        let params = TrainParams {
            max_depth: config.max_depth,
            max_features: config.max_features.resolve(),
        };
        let n = rows.len();

        let grown: Vec<(DecisionTree, FeatureVector)> = (0..config.n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(t as u64));
                let weights: Vec<f64> = if config.bootstrap {
                    let mut counts = vec![0u32; n];
                    for _ in 0..n {
                        counts[rng.random_range(0..n)] += 1;
                    }
                    counts.iter().zip(&base).map(|(&c, w)| c as f64 * w).collect()
                } else {
                    base.clone()
                };
                DecisionTree::grow(&rows, &is_human, &weights, &params, &mut rng)
            })
            .collect();
        let (trees, per_tree): (Vec<_>, Vec<_>) = grown.into_iter().unzip();

        Ok(Discriminator {
            config: config.clone(),
            standardizer,
            trees,
            class_weights: cw,
            seed: config.seed,
            tags: ModelTags::default(),
            importances: normalize_importances(&per_tree),
        })
    }

    pub fn with_tags(mut self, tags: ModelTags) -> Self {
        self.tags = tags;
        self
    }

    /// Mean human-class leaf probability over all trees.
    pub fn predict_human_prob(&self, f: &FeatureVector) -> f64 {
        let z = self.standardizer.transform(f);
        let sum: f64 = self.trees.iter().map(|t| t.predict(&z)).sum();
        (sum / self.trees.len() as f64).clamp(0.0, 1.0)
    }

    pub fn predict_batch(&self, rows: &[FeatureVector]) -> Vec<f64> {
        rows.par_iter().map(|r| self.predict_human_prob(r)).collect()
    }

    pub fn feature_importances(&self) -> FeatureVector {
        self.importances
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })
        .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DiscriminatorError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| DiscriminatorError::Corrupt(e.to_string()))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
            return Err(DiscriminatorError::Corrupt("missing or unknown format marker".into()));
        }
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| DiscriminatorError::Corrupt("missing format_version".into()))?;
        if found != MODEL_FORMAT_VERSION as u64 {
            return Err(DiscriminatorError::VersionMismatch {
                found: found as u32,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| DiscriminatorError::Corrupt(e.to_string()))?;
        let model = file.model;
        if model.trees.len() != model.config.n_estimators {
            return Err(DiscriminatorError::Corrupt(format!(
                "{} trees stored but n_estimators is {}",
                model.trees.len(),
                model.config.n_estimators
            )));
        }
        if model.standardizer.std.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(DiscriminatorError::Corrupt("standardizer has a nonpositive std".into()));
        }
        for t in &model.trees {
            t.validate()?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), DiscriminatorError> {
        std::fs::write(path, self.to_json()).map_err(|source| DiscriminatorError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DiscriminatorError> {
        let text = std::fs::read_to_string(path).map_err(|source| DiscriminatorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

pub fn train_discriminator(
    human: &[FeatureVector],
    simulator: &[FeatureVector],
    config: &ForestConfig,
) -> Result<Discriminator, DiscriminatorError> {
    Discriminator::train(human, simulator, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub roc_auc: f64,
    pub accuracy: f64,
    pub f1: f64,
}

/// Mann-Whitney AUC with average ranks for ties. `labels[i]` is true for
/// the human (positive) class.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, DiscriminatorError> {
    if scores.len() != labels.len() {
        return Err(DiscriminatorError::LengthMismatch {
            rows: scores.len(),
            labels: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(DiscriminatorError::SingleClassLabels("simulator"));
    }
    if n_neg == 0 {
        return Err(DiscriminatorError::SingleClassLabels("human"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tied block i..=j shares their average.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

/// Accuracy at threshold 0.5 and F1 with human as the positive class.
pub fn classification_metrics(scores: &[f64], labels: &[bool]) -> Result<EvalMetrics, DiscriminatorError> {
    let roc_auc = roc_auc(scores, labels)?;
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s >= 0.5;
        if pred == l {
            correct += 1;
        }
        match (pred, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    Ok(EvalMetrics {
        roc_auc,
        accuracy: correct as f64 / scores.len() as f64,
        f1,
    })
}

pub fn evaluate_discriminator(
    disc: &Discriminator,
    rows: &[FeatureVector],
    labels: &[bool],
) -> Result<EvalMetrics, DiscriminatorError> {
    if rows.len() != labels.len() {
        return Err(DiscriminatorError::LengthMismatch {
            rows: rows.len(),
            labels: labels.len(),
        });
    }
    classification_metrics(&disc.predict_batch(rows), labels)
}
