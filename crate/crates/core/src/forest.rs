//! Random forest of fully grown decision trees with class-weighted Gini
//! splits.
//!
//! Each tree trains on a fixed fraction of the samples drawn without
//! replacement under a per-tree seed derived from the forest seed, examines
//! `floor(sqrt(D))` candidate features at every node, and grows until leaves
//! are pure or no split improves the weighted impurity. Classes are weighted
//! reciprocally to their sample counts, so imbalanced training sets do not
//! bias the vote. Training is deterministic for a fixed seed regardless of
//! thread scheduling, because every tree owns its derived seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Stable seed derivation for subcomponents (trees, categories, iterations).
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub tree_count: usize,
    /// Fraction of samples drawn without replacement per tree.
    pub sample_fraction: f64,
    /// Candidate features per split; `None` means `floor(sqrt(D))`.
    pub features_per_split: Option<usize>,
    /// Compute out-of-bag accuracy during training.
    pub compute_oob: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            tree_count: 255,
            sample_fraction: 0.7,
            features_per_split: None,
            compute_oob: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        pos_weight: f64,
        neg_weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    /// Weighted positive-vote fraction at the reached leaf.
    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if features[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                TreeNode::Leaf {
                    pos_weight,
                    neg_weight,
                } => {
                    let total = pos_weight + neg_weight;
                    return if total > 0.0 { pos_weight / total } else { 0.5 };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub params: ForestParams,
    pub seed: u64,
    pub feature_count: usize,
    /// Class weights (positive, negative): total / (2 * class count).
    pub class_weights: (f64, f64),
    /// Set when training saw a single class; prediction is then constant.
    pub degenerate_class: Option<i8>,
    /// Out-of-bag accuracy, when requested at training time.
    pub oob_accuracy: Option<f64>,
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Mean positive-vote fraction over all trees.
    pub fn predict_prob(&self, features: &[f64]) -> f64 {
        match self.degenerate_class {
            Some(1) => 1.0,
            Some(_) => 0.0,
            None => {
                let sum: f64 = self.trees.iter().map(|t| t.predict(features)).sum();
                sum / self.trees.len() as f64
            }
        }
    }
}

/// Trains a random forest on feature rows `xs` with labels in `{+1, -1}`.
///
/// A single-class sample set yields a degenerate forest that predicts the
/// observed class with probability one; callers flag this in their reports.
pub fn train_forest(
    xs: &[&[f64]],
    ys: &[i8],
    params: &ForestParams,
    seed: u64,
) -> Result<RandomForest> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::InvalidInput(format!(
            "forest training needs matching nonempty inputs, got {} rows and {} labels",
            xs.len(),
            ys.len()
        )));
    }
    let feature_count = xs[0].len();
    if xs.iter().any(|row| row.len() != feature_count) {
        return Err(Error::InvalidInput("ragged feature rows".into()));
    }
    if ys.iter().any(|&y| y != 1 && y != -1) {
        return Err(Error::InvalidInput("labels must be +1 or -1".into()));
    }

    let n = xs.len();
    let pos = ys.iter().filter(|&&y| y == 1).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Ok(RandomForest {
            params: params.clone(),
            seed,
            feature_count,
            class_weights: (1.0, 1.0),
            degenerate_class: Some(if pos > 0 { 1 } else { -1 }),
            oob_accuracy: None,
            trees: Vec::new(),
        });
    }
    let class_weights = (n as f64 / (2.0 * pos as f64), n as f64 / (2.0 * neg as f64));
    let m = params
        .features_per_split
        .unwrap_or_else(|| (feature_count as f64).sqrt().floor() as usize)
        .clamp(1, feature_count);
    let draw = ((params.sample_fraction * n as f64).round() as usize).clamp(1, n);

    let grown: Vec<(DecisionTree, Vec<u32>)> = (0..params.tree_count)
        .into_par_iter()
        .map(|ti| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ti as u64));
            let mut indices: Vec<u32> = (0..n as u32).collect();
            indices.shuffle(&mut rng);
            indices.truncate(draw);
            let tree = grow_tree(xs, ys, class_weights, &indices, m, &mut rng);
            (tree, indices)
        })
        .collect();

    let oob_accuracy = if params.compute_oob {
        Some(oob_accuracy(xs, ys, &grown))
    } else {
        None
    };
    let trees = grown.into_iter().map(|(t, _)| t).collect();

    Ok(RandomForest {
        params: params.clone(),
        seed,
        feature_count,
        class_weights,
        degenerate_class: None,
        oob_accuracy,
        trees,
    })
}

fn oob_accuracy(xs: &[&[f64]], ys: &[i8], grown: &[(DecisionTree, Vec<u32>)]) -> f64 {
    let n = xs.len();
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0u32; n];
    for (tree, in_bag) in grown {
        let mut used = vec![false; n];
        for &i in in_bag {
            used[i as usize] = true;
        }
        for i in 0..n {
            if !used[i] {
                sums[i] += tree.predict(xs[i]);
                counts[i] += 1;
            }
        }
    }
    let mut correct = 0usize;
    let mut scored = 0usize;
    for i in 0..n {
        if counts[i] > 0 {
            scored += 1;
            let predicted = if sums[i] / counts[i] as f64 >= 0.5 { 1 } else { -1 };
            if predicted == ys[i] {
                correct += 1;
            }
        }
    }
    if scored == 0 {
        0.0
    } else {
        correct as f64 / scored as f64
    }
}

struct WorkItem {
    indices: Vec<u32>,
    slot: usize,
}

fn grow_tree(
    xs: &[&[f64]],
    ys: &[i8],
    (w_pos, w_neg): (f64, f64),
    indices: &[u32],
    features_per_split: usize,
    rng: &mut ChaCha8Rng,
) -> DecisionTree {
    let feature_count = xs[0].len();
    let mut nodes = vec![TreeNode::Leaf {
        pos_weight: 0.0,
        neg_weight: 0.0,
    }];
    let mut stack = vec![WorkItem {
        indices: indices.to_vec(),
        slot: 0,
    }];
    let mut candidates: Vec<u32> = (0..feature_count as u32).collect();

    while let Some(WorkItem { indices, slot }) = stack.pop() {
        let mut wp = 0.0;
        let mut wn = 0.0;
        for &i in &indices {
            if ys[i as usize] == 1 {
                wp += w_pos;
            } else {
                wn += w_neg;
            }
        }
        let make_leaf = |nodes: &mut Vec<TreeNode>| {
            nodes[slot] = TreeNode::Leaf {
                pos_weight: wp,
                neg_weight: wn,
            };
        };
        if wp == 0.0 || wn == 0.0 || indices.len() < 2 {
            make_leaf(&mut nodes);
            continue;
        }

        // Partial Fisher-Yates: the first `features_per_split` entries become
        // the distinct candidate features for this node.
        for k in 0..features_per_split.min(feature_count) {
            let j = rand::Rng::random_range(&mut *rng, k..feature_count);
            candidates.swap(k, j);
        }

        let parent_w = wp + wn;
        let parent_gini = gini(wp, wn);
        let mut best: Option<(f64, u32, f64)> = None; // (decrease, feature, threshold)
        let mut sorted: Vec<(f64, f64, f64)> = Vec::with_capacity(indices.len());
        for &feature in candidates.iter().take(features_per_split.min(feature_count)) {
            sorted.clear();
            for &i in &indices {
                let (p, q) = if ys[i as usize] == 1 {
                    (w_pos, 0.0)
                } else {
                    (0.0, w_neg)
                };
                sorted.push((xs[i as usize][feature as usize], p, q));
            }
            sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut lp = 0.0;
            let mut ln = 0.0;
            for k in 0..sorted.len() - 1 {
                lp += sorted[k].1;
                ln += sorted[k].2;
                if sorted[k].0 == sorted[k + 1].0 {
                    continue;
                }
                let rp = wp - lp;
                let rn = wn - ln;
                let decrease = parent_gini
                    - ((lp + ln) * gini(lp, ln) + (rp + rn) * gini(rp, rn)) / parent_w;
                if best.map(|(d, _, _)| decrease > d).unwrap_or(true) {
                    let threshold = 0.5 * (sorted[k].0 + sorted[k + 1].0);
                    best = Some((decrease, feature, threshold));
                }
            }
        }

        match best {
            Some((decrease, feature, threshold)) if decrease > 1e-12 => {
                let (left_idx, right_idx): (Vec<u32>, Vec<u32>) = indices
                    .iter()
                    .partition(|&&i| xs[i as usize][feature as usize] <= threshold);
                let left = nodes.len() as u32;
                let right = left + 1;
                nodes.push(TreeNode::Leaf {
                    pos_weight: 0.0,
                    neg_weight: 0.0,
                });
                nodes.push(TreeNode::Leaf {
                    pos_weight: 0.0,
                    neg_weight: 0.0,
                });
                nodes[slot] = TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                stack.push(WorkItem {
                    indices: right_idx,
                    slot: right as usize,
                });
                stack.push(WorkItem {
                    indices: left_idx,
                    slot: left as usize,
                });
            }
            _ => make_leaf(&mut nodes),
        }
    }

    DecisionTree { nodes }
}

#[inline]
fn gini(wp: f64, wn: f64) -> f64 {
    let w = wp + wn;
    if w <= 0.0 {
        return 0.0;
    }
    1.0 - (wp * wp + wn * wn) / (w * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable_set() -> (Vec<Vec<f64>>, Vec<i8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..60 {
            let y: bool = rng.random();
            let base = if y { 1.0 } else { -1.0 };
            xs.push(vec![
                base + rng.random_range(-0.3..0.3),
                rng.random_range(-1.0..1.0),
            ]);
            ys.push(if y { 1 } else { -1 });
        }
        (xs, ys)
    }

    fn rows(xs: &[Vec<f64>]) -> Vec<&[f64]> {
        xs.iter().map(|r| r.as_slice()).collect()
    }

    #[test]
    fn separable_set_is_interpolated() {
        let (xs, ys) = separable_set();
        let params = ForestParams {
            tree_count: 25,
            ..ForestParams::default()
        };
        let forest = train_forest(&rows(&xs), &ys, &params, 7).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            let p = forest.predict_prob(x);
            assert_eq!(p >= 0.5, y == 1, "prob {p} for label {y}");
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (xs, ys) = separable_set();
        let params = ForestParams {
            tree_count: 15,
            ..ForestParams::default()
        };
        let a = train_forest(&rows(&xs), &ys, &params, 42).unwrap();
        let b = train_forest(&rows(&xs), &ys, &params, 42).unwrap();
        assert_eq!(a, b);
        let c = train_forest(&rows(&xs), &ys, &params, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn duplicated_samples_keep_training_point_predictions() {
        let (xs, ys) = separable_set();
        let params = ForestParams {
            tree_count: 25,
            ..ForestParams::default()
        };
        let single = train_forest(&rows(&xs), &ys, &params, 3).unwrap();
        let mut xs2 = xs.clone();
        xs2.extend_from_slice(&xs);
        let mut ys2 = ys.clone();
        ys2.extend_from_slice(&ys);
        let doubled = train_forest(&rows(&xs2), &ys2, &params, 3).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(single.predict_prob(x) >= 0.5, y == 1);
            assert_eq!(doubled.predict_prob(x) >= 0.5, y == 1);
        }
    }

    #[test]
    fn single_class_set_degenerates() {
        let xs = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let ys = vec![1, 1];
        let forest = train_forest(&rows(&xs), &ys, &ForestParams::default(), 0).unwrap();
        assert_eq!(forest.degenerate_class, Some(1));
        assert_eq!(forest.predict_prob(&[5.0, 5.0]), 1.0);
    }

    #[test]
    fn pure_noise_oob_accuracy_near_half() {
        let params = ForestParams {
            tree_count: 40,
            compute_oob: true,
            ..ForestParams::default()
        };
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let xs: Vec<Vec<f64>> = (0..200)
                .map(|_| (0..5).map(|_| rng.random::<f64>()).collect())
                .collect();
            // Balanced labels unrelated to the features.
            let ys: Vec<i8> = (0..200).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
            let forest = train_forest(&rows(&xs), &ys, &params, seed).unwrap();
            let oob = forest.oob_accuracy.unwrap();
            assert!((0.4..=0.6).contains(&oob), "oob {oob} at seed {seed}");
        }
    }

    #[test]
    fn default_features_per_split_is_sqrt() {
        // floor(sqrt(41)) = 6, floor(sqrt(55)) = 7; checked via the formula
        // used in training.
        assert_eq!((41f64).sqrt().floor() as usize, 6);
        assert_eq!((55f64).sqrt().floor() as usize, 7);
    }
}
