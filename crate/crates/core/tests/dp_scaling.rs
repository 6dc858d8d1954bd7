//! Coarse performance check: the bottom-up/top-down labeling must stay
//! linear in node count, so doubling the leaves should roughly double the
//! wall time rather than blow up.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treeseg_core::inference::{assign_node_labels, compute_energy_tuples, CliqueScores};
use treeseg_core::merge_tree::{build_merge_tree, MergeTree, NegMedianSaliency};
use treeseg_core::segmentation::{ContourMap, Segmentation};
use treeseg_core::superpixel::build_adjacency;

fn row_tree(leaves: usize, rng: &mut ChaCha8Rng) -> MergeTree {
    let labels: Vec<u32> = (0..leaves as u32).collect();
    let seg = Segmentation::from_labels(leaves, 1, labels).unwrap();
    let vals: Vec<f64> = (0..leaves).map(|_| rng.random()).collect();
    let pb = ContourMap::new(leaves, 1, vals).unwrap();
    let adj = build_adjacency(&seg, &pb).unwrap();
    build_merge_tree(&seg, &adj, &NegMedianSaliency { pb: &pb }, None).unwrap()
}

fn time_dp(tree: &MergeTree, scores: &CliqueScores) -> f64 {
    // Best of three to tame scheduler noise.
    (0..3)
        .map(|_| {
            let start = Instant::now();
            let tuples = compute_energy_tuples(tree, scores).unwrap();
            let labeling = assign_node_labels(tree, &tuples);
            std::hint::black_box(labeling);
            start.elapsed().as_secs_f64()
        })
        .fold(f64::MAX, f64::min)
}

#[test]
fn doubling_leaves_scales_linearly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7_001);
    let small = row_tree(1 << 15, &mut rng);
    let large = row_tree(1 << 16, &mut rng);
    let scores_small =
        CliqueScores::from_probs((0..small.cliques.len()).map(|_| rng.random()).collect());
    let scores_large =
        CliqueScores::from_probs((0..large.cliques.len()).map(|_| rng.random()).collect());

    // Warm up allocators and caches.
    time_dp(&small, &scores_small);

    let t_small = time_dp(&small, &scores_small);
    let t_large = time_dp(&large, &scores_large);
    let ratio = t_large / t_small;
    // Linear scaling predicts ~2x; allow generous measurement slack.
    assert!(
        ratio < 3.5,
        "doubling leaves scaled {ratio:.2}x ({t_small:.6}s -> {t_large:.6}s)"
    );
}
