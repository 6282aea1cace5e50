use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DiscriminatorError;
use crate::fingerprint::{FeatureVector, N_FEATURES};

/// Flattened binary tree. Node `i` is a leaf when `feature[i] < 0`; otherwise
/// rows with `x[feature] <= threshold` go to `left[i]`, the rest to `right[i]`.
/// `value[i]` is `[p_simulator, p_human]` and is kept for internal nodes too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub max_depth: usize,
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<[f64; 2]>,
}

pub(crate) struct TrainParams {
    pub max_depth: usize,
    pub max_features: usize,
}

struct Sample {
    row: usize,
    weight: f64,
}

/// Samples, depth, and the parent slot to patch with its side (left = true).
type PendingNode = (Vec<Sample>, usize, Option<(usize, bool)>);

fn gini(w_sim: f64, w_human: f64) -> f64 {
    let total = w_sim + w_human;
    if total <= 0.0 {
        return 0.0;
    }
    let p = w_human / total;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

struct Split {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl DecisionTree {
    /// A depth-0 tree returning `p_human` everywhere.
    pub fn leaf(p_human: f64) -> Self {
        DecisionTree {
            max_depth: 0,
            feature: vec![-1],
            threshold: vec![0.0],
            left: vec![0],
            right: vec![0],
            value: vec![[1.0 - p_human, p_human]],
        }
    }

    /// A single split on `feature` with the given human probabilities.
    pub fn stump(feature: usize, threshold: f64, p_left: f64, p_right: f64) -> Self {
        DecisionTree {
            max_depth: 1,
            feature: vec![feature as i32, -1, -1],
            threshold: vec![threshold, 0.0, 0.0],
            left: vec![1, 0, 0],
            right: vec![2, 0, 0],
            value: vec![[0.5, 0.5], [1.0 - p_left, p_left], [1.0 - p_right, p_right]],
        }
    }

    pub fn node_count(&self) -> usize {
        self.feature.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.feature[node] < 0
    }

    /// Human-class probability at the leaf reached by `z` (already standardized).
    pub fn predict(&self, z: &FeatureVector) -> f64 {
        let mut node = 0;
        while !self.is_leaf(node) {
            let f = self.feature[node] as usize;
            node = if z[f] <= self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
        self.value[node][1]
    }

    pub fn depth(&self) -> usize {
        let mut deepest = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((node, d)) = stack.pop() {
            deepest = deepest.max(d);
            if !self.is_leaf(node) {
                stack.push((self.left[node] as usize, d + 1));
                stack.push((self.right[node] as usize, d + 1));
            }
        }
        deepest
    }

    /// Structural check used after deserialization: consistent array lengths,
    /// children strictly after their parent, valid feature indices and
    /// probability pairs that sum to 1.
    pub fn validate(&self) -> Result<(), DiscriminatorError> {
        let n = self.feature.len();
        let corrupt = |m: String| Err(DiscriminatorError::Corrupt(m));
        if n == 0 {
            return corrupt("tree has no nodes".into());
        }
        if [self.threshold.len(), self.left.len(), self.right.len(), self.value.len()]
            .iter()
            .any(|&l| l != n)
        {
            return corrupt("tree arrays differ in length".into());
        }
        for i in 0..n {
            let [a, b] = self.value[i];
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || (a + b - 1.0).abs() > 1e-9 {
                return corrupt(format!("node {i} has invalid probabilities"));
            }
            if self.feature[i] >= 0 {
                if self.feature[i] as usize >= N_FEATURES {
                    return corrupt(format!("node {i} splits on feature {}", self.feature[i]));
                }
                let (l, r) = (self.left[i] as usize, self.right[i] as usize);
                if l <= i || r <= i || l >= n || r >= n {
                    return corrupt(format!("node {i} has out-of-range children"));
                }
                if !self.threshold[i].is_finite() {
                    return corrupt(format!("node {i} has a non-finite threshold"));
                }
            }
        }
        if self.depth() > self.max_depth {
            return corrupt("tree deeper than its recorded max_depth".into());
        }
        Ok(())
    }

    /// Grows a weighted-Gini tree on standardized rows. Rows with zero
    /// weight are excluded. Splits maximise the weighted impurity decrease;
    /// ties keep the lowest feature index, then the lowest threshold.
    /// Also returns the unnormalized impurity decrease per feature.
    pub(crate) fn grow<R: Rng>(
        rows: &[FeatureVector],
        is_human: &[bool],
        weights: &[f64],
        params: &TrainParams,
        rng: &mut R,
    ) -> (Self, FeatureVector) {
        let mut tree = DecisionTree {
            max_depth: params.max_depth,
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value: Vec::new(),
        };
        let mut importance = [0.0; N_FEATURES];
        let samples: Vec<Sample> = weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(row, &weight)| Sample { row, weight })
            .collect();

        let mut stack: Vec<PendingNode> = vec![(samples, 0, None)];
        let mut order: Vec<usize> = (0..N_FEATURES).collect();
        while let Some((node_samples, depth, parent)) = stack.pop() {
            let id = tree.feature.len();
            if let Some((p, is_left)) = parent {
                if is_left {
                    tree.left[p] = id as u32;
                } else {
                    tree.right[p] = id as u32;
                }
            }
            let (w_sim, w_human) = node_samples.iter().fold((0.0, 0.0), |(s, h), smp| {
                if is_human[smp.row] {
                    (s, h + smp.weight)
                } else {
                    (s + smp.weight, h)
                }
            });
            let total = w_sim + w_human;
            let p_human = if total > 0.0 { w_human / total } else { 0.5 };
            tree.feature.push(-1);
            tree.threshold.push(0.0);
            tree.left.push(0);
            tree.right.push(0);
            tree.value.push([1.0 - p_human, p_human]);

            let impurity = gini(w_sim, w_human);
            if depth >= params.max_depth || impurity <= 0.0 || node_samples.len() < 2 {
                continue;
            }

            order.shuffle(rng);
            let mut candidates: Vec<usize> = Vec::with_capacity(params.max_features);
            for &f in &order {
                if candidates.len() == params.max_features {
                    break;
                }
                let first = rows[node_samples[0].row][f];
                if node_samples.iter().any(|s| rows[s.row][f] != first) {
                    candidates.push(f);
                }
            }
            candidates.sort_unstable();

            let mut best: Option<Split> = None;
            let mut sorted: Vec<&Sample> = node_samples.iter().collect();
            for &f in &candidates {
                sorted.sort_by(|a, b| rows[a.row][f].total_cmp(&rows[b.row][f]).then(a.row.cmp(&b.row)));
                let (mut ls, mut lh) = (0.0, 0.0);
                for k in 0..sorted.len() - 1 {
                    let s = sorted[k];
                    if is_human[s.row] {
                        lh += s.weight;
                    } else {
                        ls += s.weight;
                    }
                    let (x, next) = (rows[s.row][f], rows[sorted[k + 1].row][f]);
                    if x == next {
                        continue;
                    }
                    let (rs, rh) = (w_sim - ls, w_human - lh);
                    let decrease = total * impurity
                        - (ls + lh) * gini(ls, lh)
                        - (rs + rh) * gini(rs, rh);
                    if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                        let mut threshold = x + (next - x) / 2.0;
                        if threshold >= next || !threshold.is_finite() {
                            threshold = x;
                        }
                        best = Some(Split { feature: f, threshold, decrease });
                    }
                }
            }

            let Some(split) = best.filter(|s| s.decrease > 0.0) else {
                continue;
            };
            importance[split.feature] += split.decrease;
            tree.feature[id] = split.feature as i32;
            tree.threshold[id] = split.threshold;
            let (left, right): (Vec<Sample>, Vec<Sample>) = node_samples
                .into_iter()
                .partition(|s| rows[s.row][split.feature] <= split.threshold);
            // Right is pushed first so the left subtree is numbered next.
            stack.push((right, depth + 1, Some((id, false))));
            stack.push((left, depth + 1, Some((id, true))));
        }
        (tree, importance)
    }
}
