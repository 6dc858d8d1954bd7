//! Boundary classifier: training labels from ground truth, size-stratified
//! sample routing, and the three-forest ensemble.
//!
//! For every clique the merge case (one region) and the split case (the two
//! children) are compared against the ground truth restricted to the parent's
//! pixels; the case with the smaller error wins, with ties favoring merge.
//! Samples are routed to one of three sub-classifiers by comparing both
//! region sizes against the training-set median size, and prediction routes
//! the same way.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureLayout, FeatureVector};
use crate::forest::{derive_seed, train_forest, ForestParams, RandomForest};
use crate::merge_tree::MergeTree;
use crate::segmentation::Segmentation;

/// Error metric used to decide merge-vs-split training labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelMetric {
    Vi,
    RandIndex,
}

impl Default for LabelMetric {
    fn default() -> Self {
        LabelMetric::Vi
    }
}

/// One training sample: features of a candidate merge plus its label and the
/// sizes used for routing. The dedup key is an order-independent hash of the
/// two regions' pixel sets, stable across runs.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub features: Vec<f64>,
    pub label: i8,
    pub size_a: usize,
    pub size_b: usize,
    pub dedup_key: u64,
}

/// Order-independent dedup key for a region pair from the two pixel-set hashes.
pub fn pair_dedup_key(hash_a: u64, hash_b: u64) -> u64 {
    let (lo, hi) = (hash_a.min(hash_b), hash_a.max(hash_b));
    derive_seed(lo, hi)
}

/// Conditional-entropy sum (VI) and Rand index of a proposal-vs-ground-truth
/// labeling restricted to an arbitrary pixel subset, from joint counts.
fn compare_partitions(joint: &HashMap<(u32, u32), usize>, total: usize) -> (f64, f64) {
    let n = total as f64;
    let mut prop_marginal: HashMap<u32, usize> = HashMap::new();
    let mut gt_marginal: HashMap<u32, usize> = HashMap::new();
    for (&(a, g), &c) in joint {
        *prop_marginal.entry(a).or_insert(0) += c;
        *gt_marginal.entry(g).or_insert(0) += c;
    }
    let mut vi = 0.0;
    let mut same_same = 0u128;
    for (&(a, g), &c) in joint {
        let p = c as f64 / n;
        let pa = prop_marginal[&a] as f64 / n;
        let pg = gt_marginal[&g] as f64 / n;
        vi += p * (pg / p).ln() + p * (pa / p).ln();
        same_same += pairs(c);
    }
    let total_pairs = pairs(total);
    let same_prop: u128 = prop_marginal.values().map(|&c| pairs(c)).sum();
    let same_gt: u128 = gt_marginal.values().map(|&c| pairs(c)).sum();
    let ri = if total_pairs == 0 {
        1.0
    } else {
        (total_pairs + 2 * same_same - same_prop - same_gt) as f64 / total_pairs as f64
    };
    (vi, ri)
}

fn pairs(c: usize) -> u128 {
    let c = c as u128;
    c.saturating_sub(1) * c / 2
}

/// Merge/split label per clique: restrict the ground truth to the parent's
/// pixels, score the one-region and two-region cases, keep the better one.
/// Ties label +1.
pub fn generate_training_labels(
    tree: &MergeTree,
    gt: &Segmentation,
    metric: LabelMetric,
) -> Result<Vec<i8>> {
    if gt.width() != tree.width || gt.height() != tree.height {
        return Err(Error::DimensionMismatch {
            expected_width: tree.width,
            expected_height: tree.height,
            width: gt.width(),
            height: gt.height(),
        });
    }
    let mut labels = Vec::with_capacity(tree.cliques.len());
    for clique in &tree.cliques {
        let mut merge_joint: HashMap<(u32, u32), usize> = HashMap::new();
        let mut split_joint: HashMap<(u32, u32), usize> = HashMap::new();
        let mut total = 0usize;
        for (side, node) in [(0u32, clique.left), (1u32, clique.right)] {
            tree.for_each_pixel(node, &mut |p| {
                let g = gt.label(p as usize);
                *merge_joint.entry((0, g)).or_insert(0) += 1;
                *split_joint.entry((side, g)).or_insert(0) += 1;
                total += 1;
            });
        }
        let (vi_merge, ri_merge) = compare_partitions(&merge_joint, total);
        let (vi_split, ri_split) = compare_partitions(&split_joint, total);
        let merge_wins = match metric {
            LabelMetric::Vi => vi_merge <= vi_split,
            // Rand error is 1 - RI, so the smaller error is the larger index.
            LabelMetric::RandIndex => ri_merge >= ri_split,
        };
        labels.push(if merge_wins { 1 } else { -1 });
    }
    Ok(labels)
}

/// Size category of a region pair against the median training size:
/// 1 when both are below, 2 when exactly one is below, 3 otherwise.
pub fn size_category(size_a: usize, size_b: usize, median: f64) -> u8 {
    let max = size_a.max(size_b) as f64;
    let min = size_a.min(size_b) as f64;
    if max < median {
        1
    } else if min < median {
        2
    } else {
        3
    }
}

/// Three size-stratified random forests plus the training-set median size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleClassifier {
    pub layout: FeatureLayout,
    pub median_size: f64,
    pub forests: Vec<RandomForest>,
    /// Samples routed to each category at training time.
    pub routing_counts: [usize; 3],
    /// Categories that were empty and fell back to an all-sample forest.
    pub fallback: [bool; 3],
    pub seed: u64,
}

impl EnsembleClassifier {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ensemble serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ens: EnsembleClassifier =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if ens.forests.len() != 3 {
            return Err(Error::ModelFormat(format!(
                "expected 3 sub-classifiers, found {}",
                ens.forests.len()
            )));
        }
        if !(ens.median_size > 0.0) {
            return Err(Error::ModelFormat("median size must be positive".into()));
        }
        Ok(ens)
    }
}

/// Trains the ensemble: computes the median region size over all sample
/// sizes (both per sample), routes samples by category, and trains one
/// forest per category. An empty category falls back to a forest trained on
/// all samples and is flagged.
pub fn train_ensemble(
    samples: &[TrainingSample],
    layout: &FeatureLayout,
    params: &ForestParams,
    seed: u64,
) -> Result<EnsembleClassifier> {
    if samples.is_empty() {
        return Err(Error::Empty("training sample set"));
    }
    for s in samples {
        layout.check(&s.features)?;
    }
    let mut sizes: Vec<f64> = samples
        .iter()
        .flat_map(|s| [s.size_a as f64, s.size_b as f64])
        .collect();
    sizes.sort_unstable_by(f64::total_cmp);
    let m = sizes.len();
    let median_size = if m % 2 == 1 {
        sizes[m / 2]
    } else {
        0.5 * (sizes[m / 2 - 1] + sizes[m / 2])
    };

    let mut routed: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, s) in samples.iter().enumerate() {
        let c = size_category(s.size_a, s.size_b, median_size) as usize - 1;
        routed[c].push(i);
    }
    let routing_counts = [routed[0].len(), routed[1].len(), routed[2].len()];

    let mut forests = Vec::with_capacity(3);
    let mut fallback = [false; 3];
    for c in 0..3 {
        let forest_seed = derive_seed(seed, c as u64);
        let forest = if routed[c].is_empty() {
            fallback[c] = true;
            let xs: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
            let ys: Vec<i8> = samples.iter().map(|s| s.label).collect();
            train_forest(&xs, &ys, params, forest_seed)?
        } else {
            let xs: Vec<&[f64]> = routed[c]
                .iter()
                .map(|&i| samples[i].features.as_slice())
                .collect();
            let ys: Vec<i8> = routed[c].iter().map(|&i| samples[i].label).collect();
            train_forest(&xs, &ys, params, forest_seed)?
        };
        forests.push(forest);
    }

    Ok(EnsembleClassifier {
        layout: layout.clone(),
        median_size,
        forests,
        routing_counts,
        fallback,
        seed,
    })
}

/// Routes by size category and returns the sub-classifier's merge probability.
pub fn predict_merge_prob(
    ens: &EnsembleClassifier,
    fv: &FeatureVector,
    size_a: usize,
    size_b: usize,
) -> Result<f64> {
    ens.layout.check(&fv.values)?;
    let c = size_category(size_a, size_b, ens.median_size) as usize - 1;
    Ok(ens.forests[c].predict_prob(&fv.values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merge_tree::{build_merge_tree, NegMedianSaliency};
    use crate::segmentation::ContourMap;
    use crate::superpixel::build_adjacency;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row_tree(n: usize, rng: &mut ChaCha8Rng) -> MergeTree {
        let labels: Vec<u32> = (0..n as u32).collect();
        let seg = Segmentation::from_labels(n, 1, labels).unwrap();
        let vals: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let pb = ContourMap::new(n, 1, vals).unwrap();
        let adj = build_adjacency(&seg, &pb).unwrap();
        build_merge_tree(&seg, &adj, &NegMedianSaliency { pb: &pb }, None).unwrap()
    }

    #[test]
    fn size_category_piecewise_rule() {
        assert_eq!(size_category(3, 4, 5.0), 1);
        assert_eq!(size_category(3, 10, 5.0), 2);
        assert_eq!(size_category(5, 10, 5.0), 3);
        assert_eq!(size_category(10, 3, 5.0), 2);
    }

    #[test]
    fn labels_merge_when_gt_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tree = row_tree(4, &mut rng);
        let gt = Segmentation::from_labels(4, 1, vec![0, 0, 0, 0]).unwrap();
        let labels = generate_training_labels(&tree, &gt, LabelMetric::Vi).unwrap();
        assert!(labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn labels_split_when_gt_matches_children() {
        // Two regions; gt splits exactly along the child boundary.
        let seg = Segmentation::from_labels(2, 1, vec![0, 1]).unwrap();
        let pb = ContourMap::new(2, 1, vec![0.0, 0.0]).unwrap();
        let adj = build_adjacency(&seg, &pb).unwrap();
        let tree = build_merge_tree(&seg, &adj, &NegMedianSaliency { pb: &pb }, None).unwrap();
        let gt = Segmentation::from_labels(2, 1, vec![0, 1]).unwrap();
        let labels = generate_training_labels(&tree, &gt, LabelMetric::Vi).unwrap();
        assert_eq!(labels, vec![-1]);
    }

    #[test]
    fn orthogonal_gt_split_decided_by_vi() {
        // 8x8: children split left/right, gt splits top/bottom. Merge keeps
        // one region against two gt halves; split makes a 2x2 grid of joint
        // cells. VI(merge) = ln 2 < VI(split) = 2 ln 2, so merge wins.
        let mut labels = vec![0u32; 64];
        for y in 0..8 {
            for x in 0..8 {
                labels[y * 8 + x] = (x / 4) as u32;
            }
        }
        let seg = Segmentation::from_labels(8, 8, labels).unwrap();
        let pb = ContourMap::new(8, 8, vec![0.0; 64]).unwrap();
        let adj = build_adjacency(&seg, &pb).unwrap();
        let tree = build_merge_tree(&seg, &adj, &NegMedianSaliency { pb: &pb }, None).unwrap();
        let gt_labels: Vec<u32> = (0..64).map(|i| (i / 8 / 4) as u32).collect();
        let gt = Segmentation::from_labels(8, 8, gt_labels).unwrap();
        let labels = generate_training_labels(&tree, &gt, LabelMetric::Vi).unwrap();
        assert_eq!(labels, vec![1]);
    }

    #[test]
    fn ensemble_median_convention() {
        let mk = |size_a, size_b| TrainingSample {
            features: vec![0.0; 2],
            label: 1,
            size_a,
            size_b,
            dedup_key: 0,
        };
        let layout = FeatureLayout {
            blocks: vec![("x".into(), 2)],
        };
        let params = ForestParams {
            tree_count: 3,
            ..ForestParams::default()
        };
        let mut samples = vec![mk(1, 2), mk(3, 4)];
        samples[0].label = -1;
        let ens = train_ensemble(&samples, &layout, &params, 0).unwrap();
        assert_eq!(ens.median_size, 2.5);
    }

    #[test]
    fn routing_counts_match_recount_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layout = FeatureLayout {
            blocks: vec![("x".into(), 3)],
        };
        let params = ForestParams {
            tree_count: 3,
            ..ForestParams::default()
        };
        let samples: Vec<TrainingSample> = (0..40)
            .map(|i| TrainingSample {
                features: (0..3).map(|_| rng.random()).collect(),
                label: if i % 2 == 0 { 1 } else { -1 },
                size_a: rng.random_range(1..50),
                size_b: rng.random_range(1..50),
                dedup_key: i,
            })
            .collect();
        let ens = train_ensemble(&samples, &layout, &params, 9).unwrap();
        let mut recount = [0usize; 3];
        for s in &samples {
            let max = s.size_a.max(s.size_b) as f64;
            let min = s.size_a.min(s.size_b) as f64;
            let c = if max < ens.median_size {
                0
            } else if min < ens.median_size {
                1
            } else {
                2
            };
            recount[c] += 1;
        }
        assert_eq!(ens.routing_counts, recount);
        assert_eq!(recount.iter().sum::<usize>(), samples.len());
    }

    #[test]
    fn empty_category_uses_fallback() {
        let layout = FeatureLayout {
            blocks: vec![("x".into(), 2)],
        };
        let params = ForestParams {
            tree_count: 3,
            ..ForestParams::default()
        };
        // All pairs sized (1, 100): always category 2.
        let samples: Vec<TrainingSample> = (0..10)
            .map(|i| TrainingSample {
                features: vec![i as f64, -(i as f64)],
                label: if i % 2 == 0 { 1 } else { -1 },
                size_a: 1,
                size_b: 100,
                dedup_key: i,
            })
            .collect();
        let ens = train_ensemble(&samples, &layout, &params, 0).unwrap();
        assert_eq!(ens.routing_counts, [0, 10, 0]);
        assert_eq!(ens.fallback, [true, false, true]);
    }

    #[test]
    fn degenerate_positive_forest_predicts_one() {
        let layout = FeatureLayout {
            blocks: vec![("x".into(), 1)],
        };
        let params = ForestParams {
            tree_count: 3,
            ..ForestParams::default()
        };
        let samples: Vec<TrainingSample> = (0..4)
            .map(|i| TrainingSample {
                features: vec![i as f64],
                label: 1,
                size_a: 2,
                size_b: 2,
                dedup_key: i,
            })
            .collect();
        let ens = train_ensemble(&samples, &layout, &params, 0).unwrap();
        let fv = FeatureVector { values: vec![9.0] };
        assert_eq!(predict_merge_prob(&ens, &fv, 2, 2).unwrap(), 1.0);
    }

    #[test]
    fn prediction_is_symmetric_in_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let layout = FeatureLayout {
            blocks: vec![("x".into(), 4)],
        };
        let params = ForestParams {
            tree_count: 9,
            ..ForestParams::default()
        };
        let samples: Vec<TrainingSample> = (0..60)
            .map(|i| TrainingSample {
                features: (0..4).map(|_| rng.random()).collect(),
                label: if rng.random::<bool>() { 1 } else { -1 },
                size_a: rng.random_range(1..30),
                size_b: rng.random_range(1..30),
                dedup_key: i,
            })
            .collect();
        let ens = train_ensemble(&samples, &layout, &params, 1).unwrap();
        let fv = FeatureVector {
            values: vec![0.3, 0.7, 0.1, 0.9],
        };
        let ab = predict_merge_prob(&ens, &fv, 4, 25).unwrap();
        let ba = predict_merge_prob(&ens, &fv, 25, 4).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn prediction_matches_per_tree_tally() {
        use crate::forest::TreeNode;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let layout = FeatureLayout {
            blocks: vec![("x".into(), 3)],
        };
        let params = ForestParams {
            tree_count: 7,
            ..ForestParams::default()
        };
        let samples: Vec<TrainingSample> = (0..50)
            .map(|i| {
                let f: Vec<f64> = (0..3).map(|_| rng.random()).collect();
                let label = if f[0] > 0.5 { 1 } else { -1 };
                TrainingSample {
                    features: f,
                    label,
                    size_a: rng.random_range(1..20),
                    size_b: rng.random_range(1..20),
                    dedup_key: i,
                }
            })
            .collect();
        let ens = train_ensemble(&samples, &layout, &params, 4).unwrap();
        let point = vec![0.8, 0.2, 0.5];
        let fv = FeatureVector {
            values: point.clone(),
        };
        let size = (10, 10);
        let c = size_category(size.0, size.1, ens.median_size) as usize - 1;
        // Manual tally: walk every tree by hand.
        let mut sum = 0.0;
        for tree in &ens.forests[c].trees {
            let mut at = 0usize;
            let leaf = loop {
                match &tree.nodes[at] {
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        at = if point[*feature as usize] <= *threshold {
                            *left as usize
                        } else {
                            *right as usize
                        };
                    }
                    TreeNode::Leaf {
                        pos_weight,
                        neg_weight,
                    } => break pos_weight / (pos_weight + neg_weight),
                }
            };
            sum += leaf;
        }
        let manual = sum / ens.forests[c].trees.len() as f64;
        let got = predict_merge_prob(&ens, &fv, size.0, size.1).unwrap();
        assert_eq!(got, manual);
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let layout = FeatureLayout {
            blocks: vec![("x".into(), 5)],
        };
        let params = ForestParams {
            tree_count: 11,
            ..ForestParams::default()
        };
        let samples: Vec<TrainingSample> = (0..80)
            .map(|i| TrainingSample {
                features: (0..5).map(|_| rng.random()).collect(),
                label: if rng.random::<bool>() { 1 } else { -1 },
                size_a: rng.random_range(1..40),
                size_b: rng.random_range(1..40),
                dedup_key: i,
            })
            .collect();
        let ens = train_ensemble(&samples, &layout, &params, 77).unwrap();
        let restored = EnsembleClassifier::from_json(&ens.to_json()).unwrap();
        for _ in 0..200 {
            let fv = FeatureVector {
                values: (0..5).map(|_| rng.random()).collect(),
            };
            let sa = rng.random_range(1..60);
            let sb = rng.random_range(1..60);
            let a = predict_merge_prob(&ens, &fv, sa, sb).unwrap();
            let b = predict_merge_prob(&restored, &fv, sa, sb).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let layout = FeatureLayout {
            blocks: vec![("x".into(), 2)],
        };
        let params = ForestParams {
            tree_count: 3,
            ..ForestParams::default()
        };
        let samples = vec![
            TrainingSample {
                features: vec![0.0, 1.0],
                label: 1,
                size_a: 1,
                size_b: 1,
                dedup_key: 0,
            },
            TrainingSample {
                features: vec![1.0, 0.0],
                label: -1,
                size_a: 1,
                size_b: 1,
                dedup_key: 1,
            },
        ];
        let ens = train_ensemble(&samples, &layout, &params, 0).unwrap();
        let bad = FeatureVector {
            values: vec![0.0; 3],
        };
        assert!(predict_merge_prob(&ens, &bad, 1, 1).is_err());
    }
}
