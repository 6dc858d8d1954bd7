//! Hierarchical merge tree construction.
//!
//! Starting from the initial superpixels, the adjacent region pair with the
//! highest merging saliency is merged into a new parent node until a single
//! root region remains, producing a full binary tree. Every merge records its
//! clique (parent, left child, right child) together with the two-sided
//! boundary pixel set and the winning saliency, which downstream feature
//! extraction and scoring reuse.
//!
//! The candidate queue uses lazy invalidation: merged regions are deactivated
//! and stale heap entries are skipped on pop. Saliency ties break on the
//! lexicographically smallest (min id, max id) pair, so construction is fully
//! deterministic.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::error::{Error, Result};
use crate::features::{PixelPlanes, RegionStats};
use crate::segmentation::{ContourMap, Segmentation};
use crate::superpixel::{boundary_median, PairBoundary, RegionAdjacency};

/// One node of the merge tree. Leaves carry the initial superpixels; internal
/// nodes are the disjoint union of their two children.
#[derive(Debug, Clone)]
pub struct MergeNode {
    pub size: usize,
    /// Perimeter in unit pixel edges, image border included.
    pub perimeter: usize,
    /// Depth in the final tree; the root sits at 0.
    pub depth: usize,
    pub parent: Option<usize>,
    pub children: Option<(usize, usize)>,
    /// Order-independent hash of the node's pixel set.
    pub pixel_hash: u64,
}

impl MergeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// The (parent, left, right) triple of one merge.
#[derive(Debug, Clone)]
pub struct Clique {
    pub parent: usize,
    pub left: usize,
    pub right: usize,
    /// Two-sided boundary pixel set between the children at merge time, sorted.
    pub boundary: Vec<u32>,
    pub left_size: usize,
    pub right_size: usize,
    /// Saliency value that won this merge.
    pub saliency: f64,
}

/// Full binary merge tree over an initial segmentation.
///
/// Node ids: leaves are `0..R` matching the initial region ids; internal
/// nodes follow in merge order, so every parent id exceeds its children's
/// ids and the root is the last node. Clique `k` belongs to internal node
/// `R + k`.
#[derive(Debug, Clone)]
pub struct MergeTree {
    pub width: usize,
    pub height: usize,
    pub nodes: Vec<MergeNode>,
    pub cliques: Vec<Clique>,
    /// Sorted pixel indices per leaf (= initial region id).
    pub leaf_pixels: Vec<Vec<u32>>,
    /// Per-node color/texture accumulators, present when built with planes.
    pub stats: Option<Vec<RegionStats>>,
}

impl MergeTree {
    pub fn leaf_count(&self) -> usize {
        self.leaf_pixels.len()
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Clique index of an internal node.
    pub fn clique_index(&self, node: usize) -> Option<usize> {
        if node >= self.leaf_count() {
            Some(node - self.leaf_count())
        } else {
            None
        }
    }

    /// Applies `f` to every pixel of the node's region.
    pub fn for_each_pixel(&self, node: usize, f: &mut impl FnMut(u32)) {
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            match self.nodes[v].children {
                None => {
                    for &p in &self.leaf_pixels[v] {
                        f(p);
                    }
                }
                Some((l, r)) => {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
    }

    pub fn node_pixels(&self, node: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.nodes[node].size);
        self.for_each_pixel(node, &mut |p| out.push(p));
        out
    }

    /// Debug/test dump: one line per node,
    /// `node_id depth parent_id left_id right_id size`, leaves first,
    /// `-1` for absent links.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, node) in self.nodes.iter().enumerate() {
            let parent = node.parent.map(|p| p as i64).unwrap_or(-1);
            let (l, r) = node
                .children
                .map(|(l, r)| (l as i64, r as i64))
                .unwrap_or((-1, -1));
            out.push_str(&format!(
                "{} {} {} {} {} {}\n",
                id, node.depth, parent, l, r, node.size
            ));
        }
        out
    }
}

/// A pair of adjacent regions under consideration for merging.
pub struct MergeCandidate<'a> {
    pub boundary: &'a [u32],
    pub size_a: usize,
    pub size_b: usize,
    pub perim_a: usize,
    pub perim_b: usize,
    pub stats_a: Option<&'a RegionStats>,
    pub stats_b: Option<&'a RegionStats>,
}

/// Merging saliency: higher merges earlier. Implementations must be
/// deterministic for fixed inputs; non-adjacent pairs are never evaluated.
pub trait Saliency {
    fn eval(&self, cand: &MergeCandidate) -> f64;
}

/// One minus the median boundary-map value over the boundary pixel set.
pub fn saliency_neg_median(pb: &ContourMap, boundary: &[u32]) -> Result<f64> {
    if boundary.is_empty() {
        return Err(Error::Empty("boundary pixel set"));
    }
    Ok(1.0 - boundary_median(pb, boundary))
}

/// Boundary-statistic saliency used before any classifier exists.
pub struct NegMedianSaliency<'a> {
    pub pb: &'a ContourMap,
}

impl Saliency for NegMedianSaliency<'_> {
    fn eval(&self, cand: &MergeCandidate) -> f64 {
        saliency_neg_median(self.pb, cand.boundary).expect("nonempty boundary")
    }
}

#[derive(PartialEq)]
struct QueueEntry {
    saliency: f64,
    a: u32,
    b: u32,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Highest saliency first; ties prefer the smaller (a, b) pair.
        self.saliency
            .total_cmp(&other.saliency)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn pixel_set_hash(pixels: &[u32]) -> u64 {
    use crate::forest::splitmix64;
    pixels
        .iter()
        .fold(0u64, |acc, &p| acc.wrapping_add(splitmix64(p as u64)))
}

/// Builds the merge tree of `seg` under the given saliency function.
///
/// When `planes` is provided, per-node [`RegionStats`] are maintained so that
/// classifier-driven saliencies and downstream feature extraction can run
/// without rescanning pixels.
pub fn build_merge_tree(
    seg: &Segmentation,
    adjacency: &RegionAdjacency,
    saliency: &dyn Saliency,
    planes: Option<&PixelPlanes>,
) -> Result<MergeTree> {
    let leaf_count = seg.region_count();
    if leaf_count == 0 {
        return Err(Error::Empty("segmentation"));
    }

    let mut leaf_pixels: Vec<Vec<u32>> = vec![Vec::new(); leaf_count];
    for (idx, &label) in seg.labels().iter().enumerate() {
        leaf_pixels[label as usize].push(idx as u32);
    }

    let mut nodes: Vec<MergeNode> = (0..leaf_count)
        .map(|r| MergeNode {
            size: adjacency.region_sizes[r],
            perimeter: adjacency.perimeters[r],
            depth: 0,
            parent: None,
            children: None,
            pixel_hash: pixel_set_hash(&leaf_pixels[r]),
        })
        .collect();
    let mut stats: Option<Vec<RegionStats>> = planes.map(|planes| {
        leaf_pixels
            .iter()
            .map(|px| RegionStats::from_pixels(planes, px.iter().map(|&p| p as usize)))
            .collect()
    });

    let mut pairs: BTreeMap<(u32, u32), PairBoundary> = adjacency.pairs.clone();
    let mut neighbor_sets: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); leaf_count];
    for &(a, b) in pairs.keys() {
        neighbor_sets[a as usize].insert(b);
        neighbor_sets[b as usize].insert(a);
    }

    let eval = |pairs: &BTreeMap<(u32, u32), PairBoundary>,
                nodes: &[MergeNode],
                stats: &Option<Vec<RegionStats>>,
                a: u32,
                b: u32|
     -> f64 {
        let pb = &pairs[&(a, b)];
        let cand = MergeCandidate {
            boundary: &pb.pixels,
            size_a: nodes[a as usize].size,
            size_b: nodes[b as usize].size,
            perim_a: nodes[a as usize].perimeter,
            perim_b: nodes[b as usize].perimeter,
            stats_a: stats.as_ref().map(|s| &s[a as usize]),
            stats_b: stats.as_ref().map(|s| &s[b as usize]),
        };
        saliency.eval(&cand)
    };

    let mut heap = BinaryHeap::new();
    for &(a, b) in pairs.keys() {
        heap.push(QueueEntry {
            saliency: eval(&pairs, &nodes, &stats, a, b),
            a,
            b,
        });
    }

    let mut active = vec![true; leaf_count];
    let mut cliques = Vec::with_capacity(leaf_count.saturating_sub(1));

    while let Some(QueueEntry { saliency: sal, a, b }) = heap.pop() {
        if !active[a as usize] || !active[b as usize] {
            continue;
        }
        let u = nodes.len() as u32;
        let pair = pairs.remove(&(a, b)).expect("active pair");
        active[a as usize] = false;
        active[b as usize] = false;
        active.push(true);
        nodes[a as usize].parent = Some(u as usize);
        nodes[b as usize].parent = Some(u as usize);
        let internal_edges = pair.edges;
        nodes.push(MergeNode {
            size: nodes[a as usize].size + nodes[b as usize].size,
            perimeter: nodes[a as usize].perimeter + nodes[b as usize].perimeter
                - 2 * internal_edges,
            depth: 0,
            parent: None,
            children: Some((a as usize, b as usize)),
            pixel_hash: nodes[a as usize]
                .pixel_hash
                .wrapping_add(nodes[b as usize].pixel_hash),
        });
        if let Some(stats) = stats.as_mut() {
            let merged = stats[a as usize].merged(&stats[b as usize]);
            stats.push(merged);
        }
        cliques.push(Clique {
            parent: u as usize,
            left: a as usize,
            right: b as usize,
            left_size: nodes[a as usize].size,
            right_size: nodes[b as usize].size,
            saliency: sal,
            boundary: pair.pixels,
        });

        // The union inherits the neighbors of both children; third-party
        // boundary sets merge by plain union under the two-sided definition.
        let mut merged_neighbors: BTreeSet<u32> = neighbor_sets[a as usize]
            .union(&neighbor_sets[b as usize])
            .copied()
            .collect();
        merged_neighbors.remove(&a);
        merged_neighbors.remove(&b);
        neighbor_sets[a as usize].clear();
        neighbor_sets[b as usize].clear();
        for &n in &merged_neighbors {
            neighbor_sets[n as usize].remove(&a);
            neighbor_sets[n as usize].remove(&b);
            let mut pixels = Vec::new();
            let mut edges = 0;
            for old in [(a.min(n), a.max(n)), (b.min(n), b.max(n))] {
                if let Some(old_pair) = pairs.remove(&old) {
                    pixels.extend_from_slice(&old_pair.pixels);
                    edges += old_pair.edges;
                }
            }
            pixels.sort_unstable();
            pixels.dedup();
            let key = (n.min(u), n.max(u));
            pairs.insert(key, PairBoundary { pixels, edges });
            neighbor_sets[n as usize].insert(u);
            heap.push(QueueEntry {
                saliency: eval(&pairs, &nodes, &stats, key.0, key.1),
                a: key.0,
                b: key.1,
            });
        }
        neighbor_sets.push(merged_neighbors);
    }

    if active.iter().filter(|&&a| a).count() != 1 {
        return Err(Error::DisconnectedAdjacency);
    }
    debug_assert_eq!(nodes.len(), 2 * leaf_count - 1);

    // Depths top-down; parents always have larger ids than children.
    for id in (0..nodes.len()).rev() {
        if let Some((l, r)) = nodes[id].children {
            let d = nodes[id].depth + 1;
            nodes[l].depth = d;
            nodes[r].depth = d;
        }
    }

    Ok(MergeTree {
        width: seg.width(),
        height: seg.height(),
        nodes,
        cliques,
        leaf_pixels,
        stats,
    })
}

/// Hierarchy-strength map from an existing tree: every boundary pixel takes
/// one minus the saliency of the first merge that dissolved its interface,
/// i.e. the boundary strength at which its two sides joined. Interior pixels
/// stay 0. Values are clamped to `[0, 1]`.
pub fn saliency_map_from_tree(tree: &MergeTree) -> ContourMap {
    let mut values = vec![0.0; tree.width * tree.height];
    let mut assigned = vec![false; tree.width * tree.height];
    for clique in &tree.cliques {
        let v = (1.0 - clique.saliency).clamp(0.0, 1.0);
        for &p in &clique.boundary {
            if !assigned[p as usize] {
                assigned[p as usize] = true;
                values[p as usize] = v;
            }
        }
    }
    ContourMap::new(tree.width, tree.height, values).expect("values clamped to [0,1]")
}
