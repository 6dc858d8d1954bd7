//! Initial over-segmentation: watershed on a boundary map, small-region
//! pre-merging, and the region adjacency structure with two-sided boundary
//! pixel sets.
//!
//! The watershed variant is a deterministic priority flood: the boundary map
//! is clamped from below at the water level, every regional-minimum plateau
//! of the clamped map seeds one basin, and remaining pixels are claimed in
//! increasing (value, pixel index) order by the first basin to reach them.
//! No pixels are left unlabeled as watershed lines.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use crate::error::{Error, Result};
use crate::segmentation::{neighbors4, ContourMap, Segmentation};

/// Region sizes, neighbor pairs, and per-pair boundary pixel sets.
///
/// A pair `(i, j)` with `i < j` is present iff some pixel of region `i` is
/// 4-adjacent to some pixel of region `j`. Its boundary pixel set contains
/// the pixels of either region adjacent to the other, so it always holds at
/// least one pixel from each side. Perimeters and shared-edge counts are in
/// unit pixel edges, counting the image border.
#[derive(Debug, Clone)]
pub struct RegionAdjacency {
    pub region_sizes: Vec<usize>,
    pub perimeters: Vec<usize>,
    pub pairs: BTreeMap<(u32, u32), PairBoundary>,
}

/// Boundary data for one adjacent region pair.
#[derive(Debug, Clone)]
pub struct PairBoundary {
    /// Sorted pixel indices of the two-sided boundary set.
    pub pixels: Vec<u32>,
    /// Number of 4-adjacent pixel pairs straddling the two regions.
    pub edges: usize,
}

impl RegionAdjacency {
    pub fn neighbors_of(&self, region: u32) -> impl Iterator<Item = u32> + '_ {
        self.pairs.keys().filter_map(move |&(a, b)| {
            if a == region {
                Some(b)
            } else if b == region {
                Some(a)
            } else {
                None
            }
        })
    }
}

/// Min-heap entry ordered by (value, pixel index).
#[derive(PartialEq)]
struct FloodEntry {
    value: f64,
    idx: u32,
}

impl Eq for FloodEntry {}

impl Ord for FloodEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so BinaryHeap pops the smallest (value, idx) first.
        other
            .value
            .total_cmp(&self.value)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Priority-flood watershed of `pb` clamped from below at `water_level`.
///
/// Every pixel is assigned to exactly one basin; ridge pixels join the basin
/// that reaches them first in (value, index) queue order. Region count is
/// non-increasing in the water level.
pub fn watershed(pb: &ContourMap, water_level: f64) -> Result<Segmentation> {
    if !(0.0..1.0).contains(&water_level) {
        return Err(Error::InvalidInput(format!(
            "water level must lie in [0, 1), got {water_level}"
        )));
    }
    let w = pb.width();
    let h = pb.height();
    let n = w * h;
    let elev: Vec<f64> = pb.values().iter().map(|&v| v.max(water_level)).collect();

    // Plateaus of equal clamped value; a plateau seeds a basin iff none of
    // its pixels has a strictly lower neighbor. Pixels at the water level are
    // always seeds since no value is lower.
    let mut plateau = vec![u32::MAX; n];
    let mut plateau_is_min = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if plateau[start] != u32::MAX {
            continue;
        }
        let id = plateau_is_min.len() as u32;
        let v = elev[start];
        let mut is_min = true;
        plateau[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            for nb in neighbors4(p, w, h) {
                if elev[nb] < v {
                    is_min = false;
                } else if elev[nb] == v && plateau[nb] == u32::MAX {
                    plateau[nb] = id;
                    stack.push(nb);
                }
            }
        }
        plateau_is_min.push(is_min);
    }

    let mut labels = vec![u32::MAX; n];
    let mut heap = BinaryHeap::new();
    let mut next_basin = 0u32;
    let mut seed_of_plateau = vec![u32::MAX; plateau_is_min.len()];
    for idx in 0..n {
        let pl = plateau[idx] as usize;
        if plateau_is_min[pl] {
            if seed_of_plateau[pl] == u32::MAX {
                seed_of_plateau[pl] = next_basin;
                next_basin += 1;
            }
            labels[idx] = seed_of_plateau[pl];
            heap.push(FloodEntry {
                value: elev[idx],
                idx: idx as u32,
            });
        }
    }

    while let Some(FloodEntry { idx, .. }) = heap.pop() {
        let label = labels[idx as usize];
        for nb in neighbors4(idx as usize, w, h) {
            if labels[nb] == u32::MAX {
                labels[nb] = label;
                heap.push(FloodEntry {
                    value: elev[nb],
                    idx: nb as u32,
                });
            }
        }
    }

    debug_assert!(labels.iter().all(|&l| l != u32::MAX));
    Segmentation::from_labels(w, h, labels)
}

/// Builds the adjacency structure of a canonical segmentation.
///
/// `pb` is only checked for matching dimensions; boundary statistics are
/// taken from it later by the saliency and feature code.
pub fn build_adjacency(seg: &Segmentation, pb: &ContourMap) -> Result<RegionAdjacency> {
    pb.same_size(seg.width(), seg.height())?;
    let w = seg.width();
    let h = seg.height();
    let mut perimeters = vec![0usize; seg.region_count()];
    let mut pair_pixels: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    let mut pair_edges: BTreeMap<(u32, u32), usize> = BTreeMap::new();

    for idx in 0..w * h {
        let x = idx % w;
        let y = idx / w;
        let a = seg.label(idx);
        // Image border contributes to the perimeter.
        if x == 0 {
            perimeters[a as usize] += 1;
        }
        if x + 1 == w {
            perimeters[a as usize] += 1;
        }
        if y == 0 {
            perimeters[a as usize] += 1;
        }
        if y + 1 == h {
            perimeters[a as usize] += 1;
        }
        // Right and down neighbors cover each adjacency once.
        for nb in [
            if x + 1 < w { Some(idx + 1) } else { None },
            if y + 1 < h { Some(idx + w) } else { None },
        ]
        .into_iter()
        .flatten()
        {
            let b = seg.label(nb);
            if a != b {
                perimeters[a as usize] += 1;
                perimeters[b as usize] += 1;
                let key = (a.min(b), a.max(b));
                *pair_edges.entry(key).or_insert(0) += 1;
                let px = pair_pixels.entry(key).or_default();
                px.push(idx as u32);
                px.push(nb as u32);
            }
        }
    }

    let pairs = pair_pixels
        .into_iter()
        .map(|(key, mut pixels)| {
            pixels.sort_unstable();
            pixels.dedup();
            let edges = pair_edges[&key];
            (key, PairBoundary { pixels, edges })
        })
        .collect();

    Ok(RegionAdjacency {
        region_sizes: seg.region_sizes(),
        perimeters,
        pairs,
    })
}

/// Median of `pb` over a boundary pixel set; even counts average the middle
/// two values.
pub fn boundary_median(pb: &ContourMap, pixels: &[u32]) -> f64 {
    debug_assert!(!pixels.is_empty());
    let mut vals: Vec<f64> = pixels.iter().map(|&p| pb.value(p as usize)).collect();
    vals.sort_unstable_by(f64::total_cmp);
    let m = vals.len();
    if m % 2 == 1 {
        vals[m / 2]
    } else {
        0.5 * (vals[m / 2 - 1] + vals[m / 2])
    }
}

/// Repeatedly merges the smallest region below `min_size` into the neighbor
/// with the lowest boundary barrier (median of `pb` over the shared boundary
/// set), until no region is undersized or one region remains.
///
/// Ties: the smallest undersized region with the lowest id goes first; barrier
/// ties pick the smaller neighbor id.
pub fn pre_merge_small(
    seg: &Segmentation,
    pb: &ContourMap,
    min_size: usize,
) -> Result<Segmentation> {
    pb.same_size(seg.width(), seg.height())?;
    if min_size == 0 || seg.region_count() <= 1 {
        return Ok(seg.clone());
    }

    let mut adj = build_adjacency(seg, pb)?;
    // alive[r] = current representative; merged regions point at their absorber.
    let mut labels: Vec<u32> = seg.labels().to_vec();
    let mut alive: Vec<bool> = vec![true; seg.region_count()];
    let mut neighbor_sets: Vec<std::collections::BTreeSet<u32>> =
        vec![std::collections::BTreeSet::new(); seg.region_count()];
    for &(a, b) in adj.pairs.keys() {
        neighbor_sets[a as usize].insert(b);
        neighbor_sets[b as usize].insert(a);
    }

    loop {
        let alive_count = alive.iter().filter(|&&a| a).count();
        if alive_count <= 1 {
            break;
        }
        // Smallest undersized region, lowest id on ties.
        let victim = (0..alive.len())
            .filter(|&r| alive[r] && adj.region_sizes[r] < min_size)
            .min_by_key(|&r| (adj.region_sizes[r], r));
        let Some(victim) = victim else { break };
        let v = victim as u32;

        let mut best: Option<(f64, u32)> = None;
        for &nb in &neighbor_sets[victim] {
            let key = (v.min(nb), v.max(nb));
            let barrier = boundary_median(pb, &adj.pairs[&key].pixels);
            let better = match best {
                None => true,
                Some((b, bn)) => barrier < b || (barrier == b && nb < bn),
            };
            if better {
                best = Some((barrier, nb));
            }
        }
        // A partition of a connected grid always leaves at least one neighbor.
        let (_, target) = best.expect("undersized region with no neighbor");
        merge_into(&mut adj, &mut neighbor_sets, &mut alive, v, target);
        for l in labels.iter_mut() {
            if *l == v {
                *l = target;
            }
        }
    }

    Segmentation::from_labels(seg.width(), seg.height(), labels)
}

/// Folds region `v` into `target`, updating sizes, neighbor sets, and
/// two-sided boundary pixel sets. Third-party boundary sets merge by plain
/// union, which is exact for the two-sided definition.
fn merge_into(
    adj: &mut RegionAdjacency,
    neighbor_sets: &mut [std::collections::BTreeSet<u32>],
    alive: &mut [bool],
    v: u32,
    target: u32,
) {
    alive[v as usize] = false;
    adj.region_sizes[target as usize] += adj.region_sizes[v as usize];
    let internal_key = (v.min(target), v.max(target));
    let internal_edges = adj.pairs[&internal_key].edges;
    // Both perimeters count every shared edge once, so the sum is evaluated
    // before the subtraction to stay in range.
    adj.perimeters[target as usize] =
        adj.perimeters[target as usize] + adj.perimeters[v as usize] - 2 * internal_edges;
    adj.pairs.remove(&internal_key);
    neighbor_sets[target as usize].remove(&v);
    neighbor_sets[v as usize].remove(&target);

    let v_neighbors: Vec<u32> = neighbor_sets[v as usize].iter().copied().collect();
    for nb in v_neighbors {
        let old_key = (v.min(nb), v.max(nb));
        let old = adj.pairs.remove(&old_key).expect("pair data");
        neighbor_sets[nb as usize].remove(&v);
        let new_key = (target.min(nb), target.max(nb));
        match adj.pairs.entry(new_key) {
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let merged = e.get_mut();
                merged.pixels.extend_from_slice(&old.pixels);
                merged.pixels.sort_unstable();
                merged.pixels.dedup();
                merged.edges += old.edges;
            }
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(old);
            }
        }
        neighbor_sets[target as usize].insert(nb);
        neighbor_sets[nb as usize].insert(target);
    }
    neighbor_sets[v as usize].clear();
}
