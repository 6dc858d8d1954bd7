//! Iterative training and testing orchestration.
//!
//! Training alternates between building merge trees and fitting boundary
//! classifiers: iteration 0 builds trees from boundary-map statistics, every
//! later iteration builds them with the previous classifier as the merging
//! saliency, and each classifier trains on the deduplicated union of all
//! samples collected so far. Testing replays the same tree sequence, scores
//! each tree with its iteration's classifier, solves the constrained
//! labeling, and averages the binarized segmentations into a real-valued
//! contour hierarchy. When items carry several ground truths, one series is
//! trained per detail level and all series contribute to the test-time
//! average.

use std::collections::HashSet;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    generate_training_labels, pair_dedup_key, predict_merge_prob, train_ensemble,
    EnsembleClassifier, LabelMetric, TrainingSample,
};
use crate::error::{Error, Result};
use crate::features::{
    extract_pair_features, FeatureContext, FeatureLayout, PixelPlanes,
};
use crate::forest::{derive_seed, ForestParams};
use crate::inference::{infer_labels, labels_to_segmentation, CliqueScores};
use crate::merge_tree::{
    build_merge_tree, saliency_map_from_tree, MergeCandidate, MergeTree, NegMedianSaliency,
    Saliency,
};
use crate::segmentation::{neighbors4, ContourMap, Image, Segmentation};
use crate::superpixel::{build_adjacency, pre_merge_small, watershed, RegionAdjacency};

/// All tunables of the pipeline; defaults are the fixed settings used
/// throughout: water level 0.01, pre-merge below 20 pixels, 10 iterations,
/// 255 fully grown trees on 70% subsamples with sqrt-many split candidates
/// and reciprocal class weights, labels decided by variation of information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub water_level: f64,
    pub pre_merge_min_size: usize,
    /// Iteration count T; the classifier series has T + 1 entries.
    pub iterations: usize,
    pub forest: ForestParams,
    pub label_metric: LabelMetric,
    pub seed: u64,
    /// Stop a level's iterations once validation ODS VI stops improving.
    pub validation_stop: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            water_level: 0.01,
            pre_merge_min_size: 20,
            iterations: 10,
            forest: ForestParams::default(),
            label_metric: LabelMetric::Vi,
            seed: 0,
            validation_stop: false,
        }
    }
}

/// One dataset item held in memory; ground truths are ordered by detail
/// level and may be empty for test-only items.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub name: String,
    pub image: Image,
    pub pb: ContourMap,
    pub gts: Vec<Segmentation>,
}

/// One manifest line: split tag, image path, optional boundary-map path, and
/// at least one ground-truth path.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub split: String,
    pub image: PathBuf,
    pub pb: Option<PathBuf>,
    pub gts: Vec<PathBuf>,
}

/// Line-oriented manifest: tab-separated `split image pb gt1;gt2;...`,
/// `-` for a missing boundary map, `#` comments ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::InvalidInput(format!(
                    "manifest line {}: expected 4 tab-separated fields, got {}",
                    ln + 1,
                    fields.len()
                )));
            }
            let pb = match fields[2] {
                "-" | "" => None,
                p => Some(PathBuf::from(p)),
            };
            let gts: Vec<PathBuf> = fields[3]
                .split(';')
                .filter(|p| !p.is_empty() && *p != "-")
                .map(PathBuf::from)
                .collect();
            if gts.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "manifest line {}: at least one ground-truth path is required",
                    ln + 1
                )));
            }
            entries.push(ManifestEntry {
                split: fields[0].to_string(),
                image: PathBuf::from(fields[1]),
                pb,
                gts,
            });
        }
        Ok(DatasetManifest { entries })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let pb = e
                .pb
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "-".into());
            let gts: Vec<String> = e.gts.iter().map(|p| p.display().to_string()).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.split,
                e.image.display(),
                pb,
                gts.join(";")
            ));
        }
        out
    }

    pub fn split(&self, tag: &str) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == tag).collect()
    }
}

/// Per-iteration training bookkeeping for reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub samples_total: usize,
    pub samples_new: usize,
    pub routing_counts: [usize; 3],
    pub fallback: [bool; 3],
}

/// The classifiers of one ground-truth detail level, `f^0..f^T`.
#[derive(Debug, Clone)]
pub struct LevelSeries {
    pub classifiers: Vec<EnsembleClassifier>,
    pub reports: Vec<IterationReport>,
}

/// Configuration snapshot stored alongside a trained series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSnapshot {
    pub water_level: f64,
    pub pre_merge_min_size: usize,
    pub iterations: usize,
    pub label_metric: LabelMetric,
    pub seed: u64,
    pub layout: FeatureLayout,
}

/// One classifier series per detail level plus the configuration snapshot.
#[derive(Debug, Clone)]
pub struct ClassifierSeries {
    pub snapshot: SeriesSnapshot,
    pub levels: Vec<LevelSeries>,
}

/// Superpixels, adjacency, the boundary-statistic tree, and the feature
/// context of one image, shared by the training and testing loops.
pub struct PreparedItem {
    pub seg: Segmentation,
    pub adjacency: RegionAdjacency,
    pub tree0: MergeTree,
    pub ctx: FeatureContext,
}

/// Runs superpixel generation and feature-context construction for one item.
///
/// The iteration-0 tree is built here from negated-median saliency; its merge
/// saliencies define the hierarchy-strength map used as the second boundary
/// feature plane.
pub fn prepare_item(item: &DatasetItem, config: &PipelineConfig) -> Result<PreparedItem> {
    let wrap = |e: Error| {
        Error::InvalidInput(format!("item {}: {}", item.name, e))
    };
    item.pb
        .same_size(item.image.width(), item.image.height())
        .map_err(wrap)?;
    let seg = watershed(&item.pb, config.water_level).map_err(wrap)?;
    let seg = pre_merge_small(&seg, &item.pb, config.pre_merge_min_size).map_err(wrap)?;
    let adjacency = build_adjacency(&seg, &item.pb).map_err(wrap)?;
    let planes = PixelPlanes::new(&item.image);
    let tree0 = build_merge_tree(
        &seg,
        &adjacency,
        &NegMedianSaliency { pb: &item.pb },
        Some(&planes),
    )
    .map_err(wrap)?;
    let saliency_map = saliency_map_from_tree(&tree0);
    let ctx = FeatureContext::new(planes, item.pb.clone(), saliency_map).map_err(wrap)?;
    Ok(PreparedItem {
        seg,
        adjacency,
        tree0,
        ctx,
    })
}

fn prepare_all(items: &[DatasetItem], config: &PipelineConfig) -> Result<Vec<PreparedItem>> {
    items
        .par_iter()
        .map(|item| prepare_item(item, config))
        .collect()
}

/// Classifier-as-saliency: candidate pairs are scored by the ensemble's
/// merge probability on the pair's features.
pub struct ClassifierSaliency<'a> {
    pub classifier: &'a EnsembleClassifier,
    pub ctx: &'a FeatureContext,
}

impl Saliency for ClassifierSaliency<'_> {
    fn eval(&self, cand: &MergeCandidate) -> f64 {
        let fv = extract_pair_features(
            self.ctx,
            cand.stats_a.expect("tree built with pixel planes"),
            cand.stats_b.expect("tree built with pixel planes"),
            cand.boundary,
            cand.perim_a,
            cand.perim_b,
        )
        .expect("feature extraction on live pair");
        predict_merge_prob(self.classifier, &fv, cand.size_a, cand.size_b)
            .expect("layout checked before tree construction")
    }
}

/// Scores every clique of a tree with the given classifier.
pub fn score_cliques(
    tree: &MergeTree,
    ctx: &FeatureContext,
    classifier: &EnsembleClassifier,
) -> Result<CliqueScores> {
    let stats = tree
        .stats
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("tree was built without pixel planes".into()))?;
    let mut probs = Vec::with_capacity(tree.cliques.len());
    for clique in &tree.cliques {
        let fv = extract_pair_features(
            ctx,
            &stats[clique.left],
            &stats[clique.right],
            &clique.boundary,
            tree.nodes[clique.left].perimeter,
            tree.nodes[clique.right].perimeter,
        )?;
        probs.push(predict_merge_prob(
            classifier,
            &fv,
            clique.left_size,
            clique.right_size,
        )?);
    }
    Ok(CliqueScores::from_probs(probs))
}

/// Extracts one training sample per clique, labeled against `gt`.
pub fn collect_samples(
    tree: &MergeTree,
    ctx: &FeatureContext,
    gt: &Segmentation,
    metric: LabelMetric,
) -> Result<Vec<TrainingSample>> {
    let stats = tree
        .stats
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("tree was built without pixel planes".into()))?;
    let labels = generate_training_labels(tree, gt, metric)?;
    let mut samples = Vec::with_capacity(tree.cliques.len());
    for (clique, &label) in tree.cliques.iter().zip(&labels) {
        let fv = extract_pair_features(
            ctx,
            &stats[clique.left],
            &stats[clique.right],
            &clique.boundary,
            tree.nodes[clique.left].perimeter,
            tree.nodes[clique.right].perimeter,
        )?;
        samples.push(TrainingSample {
            features: fv.values,
            label,
            size_a: clique.left_size,
            size_b: clique.right_size,
            dedup_key: pair_dedup_key(
                tree.nodes[clique.left].pixel_hash,
                tree.nodes[clique.right].pixel_hash,
            ),
        });
    }
    Ok(samples)
}

fn check_layout(classifier: &EnsembleClassifier, layout: &FeatureLayout) -> Result<()> {
    if classifier.layout.len() != layout.len() {
        return Err(Error::LayoutMismatch {
            expected: layout.len(),
            got: classifier.layout.len(),
        });
    }
    Ok(())
}

/// Iterative training over all detail levels.
///
/// `validation` is only consulted when `config.validation_stop` is set; a
/// level then stops iterating once its validation ODS VI no longer improves
/// and keeps the best prefix of classifiers.
pub fn train_iterative(
    items: &[DatasetItem],
    validation: &[DatasetItem],
    config: &PipelineConfig,
) -> Result<ClassifierSeries> {
    if items.is_empty() {
        return Err(Error::Empty("training set"));
    }
    for item in items {
        if item.gts.is_empty() {
            return Err(Error::InvalidInput(format!(
                "training item {} has no ground truth",
                item.name
            )));
        }
    }
    let layout = FeatureLayout::default();
    let prepared = prepare_all(items, config)?;
    let validation_prepared = if config.validation_stop && !validation.is_empty() {
        Some(prepare_all(validation, config)?)
    } else {
        None
    };
    let level_count = items.iter().map(|i| i.gts.len()).min().unwrap();

    let mut levels = Vec::with_capacity(level_count);
    for level in 0..level_count {
        let level_seed = derive_seed(config.seed, level as u64);
        let mut samples: Vec<TrainingSample> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut classifiers: Vec<EnsembleClassifier> = Vec::new();
        let mut reports: Vec<IterationReport> = Vec::new();
        let mut best_vi = f64::INFINITY;
        let mut best_len = 0usize;

        for t in 0..=config.iterations {
            let built: Vec<MergeTree>;
            let trees: Vec<&MergeTree> = if t == 0 {
                prepared.iter().map(|p| &p.tree0).collect()
            } else {
                let previous = &classifiers[t - 1];
                built = prepared
                    .par_iter()
                    .map(|p| {
                        build_merge_tree(
                            &p.seg,
                            &p.adjacency,
                            &ClassifierSaliency {
                                classifier: previous,
                                ctx: &p.ctx,
                            },
                            Some(&p.ctx.planes),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                built.iter().collect()
            };

            let batches: Vec<Vec<TrainingSample>> = prepared
                .par_iter()
                .zip(trees.par_iter())
                .zip(items.par_iter())
                .map(|((p, tree), item)| {
                    collect_samples(tree, &p.ctx, &item.gts[level], config.label_metric)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut samples_new = 0usize;
            for batch in batches {
                for s in batch {
                    if seen.insert(s.dedup_key) {
                        samples.push(s);
                        samples_new += 1;
                    }
                }
            }

            let classifier = train_ensemble(
                &samples,
                &layout,
                &config.forest,
                derive_seed(level_seed, t as u64),
            )?;
            check_layout(&classifier, &layout)?;
            reports.push(IterationReport {
                iteration: t,
                samples_total: samples.len(),
                samples_new,
                routing_counts: classifier.routing_counts,
                fallback: classifier.fallback,
            });
            classifiers.push(classifier);

            if let Some(vp) = &validation_prepared {
                let maps = segment_level(vp, &classifiers)?;
                let accumulated: Vec<ContourMap> = maps
                    .iter()
                    .map(|m| accumulate_contours(m))
                    .collect::<Result<Vec<_>>>()?;
                let gts: Vec<Vec<Segmentation>> =
                    validation.iter().map(|i| i.gts.clone()).collect();
                let report = crate::metrics::evaluate_ods_ois(
                    &accumulated,
                    &gts,
                    &crate::metrics::default_threshold_grid(),
                )?;
                let vi = report.ods_vi.0;
                if vi < best_vi {
                    best_vi = vi;
                    best_len = classifiers.len();
                } else {
                    classifiers.truncate(best_len);
                    reports.truncate(best_len);
                    break;
                }
            }
        }
        levels.push(LevelSeries {
            classifiers,
            reports,
        });
    }

    Ok(ClassifierSeries {
        snapshot: SeriesSnapshot {
            water_level: config.water_level,
            pre_merge_min_size: config.pre_merge_min_size,
            iterations: config.iterations,
            label_metric: config.label_metric,
            seed: config.seed,
            layout,
        },
        levels,
    })
}

/// Binary contour maps of one level's iteration sequence for each prepared
/// item: `result[item][iteration]`.
fn segment_level(
    prepared: &[PreparedItem],
    classifiers: &[EnsembleClassifier],
) -> Result<Vec<Vec<ContourMap>>> {
    prepared
        .par_iter()
        .map(|p| {
            let mut maps = Vec::with_capacity(classifiers.len());
            for (t, classifier) in classifiers.iter().enumerate() {
                let built;
                let tree: &MergeTree = if t == 0 {
                    &p.tree0
                } else {
                    built = build_merge_tree(
                        &p.seg,
                        &p.adjacency,
                        &ClassifierSaliency {
                            classifier: &classifiers[t - 1],
                            ctx: &p.ctx,
                        },
                        Some(&p.ctx.planes),
                    )?;
                    &built
                };
                let scores = score_cliques(tree, &p.ctx, classifier)?;
                let labeling = infer_labels(tree, &scores)?;
                let seg = labels_to_segmentation(tree, &labeling)?;
                maps.push(seg_to_contour(&seg));
            }
            Ok(maps)
        })
        .collect()
}

/// Per-image binary contour maps for every (level, iteration) pair, in level
/// order then iteration order. `segment_iterative` averages them; tests use
/// the raw maps to compare iteration prefixes.
pub fn segment_iterative_maps(
    items: &[DatasetItem],
    series: &ClassifierSeries,
    config: &PipelineConfig,
) -> Result<Vec<Vec<ContourMap>>> {
    if series.levels.is_empty() {
        return Err(Error::Empty("classifier series"));
    }
    let layout = FeatureLayout::default();
    for level in &series.levels {
        for classifier in &level.classifiers {
            check_layout(classifier, &layout)?;
        }
    }
    let prepared = prepare_all(items, config)?;
    let mut per_image: Vec<Vec<ContourMap>> = vec![Vec::new(); items.len()];
    for level in &series.levels {
        let level_maps = segment_level(&prepared, &level.classifiers)?;
        for (img, maps) in level_maps.into_iter().enumerate() {
            per_image[img].extend(maps);
        }
    }
    Ok(per_image)
}

/// Full testing pass: the accumulated contour hierarchy per image.
pub fn segment_iterative(
    items: &[DatasetItem],
    series: &ClassifierSeries,
    config: &PipelineConfig,
) -> Result<Vec<ContourMap>> {
    segment_iterative_maps(items, series, config)?
        .iter()
        .map(|maps| accumulate_contours(maps))
        .collect()
}

/// Arithmetic mean of contour maps; values land on the k/n lattice.
pub fn accumulate_contours(maps: &[ContourMap]) -> Result<ContourMap> {
    let first = maps.first().ok_or(Error::Empty("contour map list"))?;
    let n = first.width() * first.height();
    let mut sum = vec![0.0f64; n];
    for m in maps {
        m.same_size(first.width(), first.height())?;
        for (acc, &v) in sum.iter_mut().zip(m.values()) {
            *acc += v;
        }
    }
    let k = maps.len() as f64;
    ContourMap::new(first.width(), first.height(), sum.iter().map(|v| v / k).collect())
}

/// Binary contour map of a segmentation: 1 where any 4-neighbor differs.
pub fn seg_to_contour(seg: &Segmentation) -> ContourMap {
    let w = seg.width();
    let h = seg.height();
    let values = (0..w * h)
        .map(|idx| {
            let here = seg.label(idx);
            if neighbors4(idx, w, h).any(|n| seg.label(n) != here) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    ContourMap::new(w, h, values).expect("binary values")
}

/// Recovers a segmentation from a contour map at a threshold.
///
/// Pixels above the threshold are boundary; connected components of the rest
/// seed regions, and boundary pixels then join the adjacent region with the
/// most already-assigned neighbor pixels (ties to the smaller region id),
/// pass by pass, until everything is assigned. An all-boundary map yields a
/// single region.
pub fn contour_to_segmentation(contour: &ContourMap, threshold: f64) -> Result<Segmentation> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidInput(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let w = contour.width();
    let h = contour.height();
    let n = w * h;
    let boundary: Vec<bool> = contour.values().iter().map(|&v| v > threshold).collect();
    if boundary.iter().all(|&b| b) {
        return Segmentation::from_labels(w, h, vec![0; n]);
    }

    // Seed regions: components of the non-boundary pixels.
    let mut labels = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..n {
        if boundary[start] || labels[start] != u32::MAX {
            continue;
        }
        labels[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            for nb in neighbors4(p, w, h) {
                if !boundary[nb] && labels[nb] == u32::MAX {
                    labels[nb] = next;
                    stack.push(nb);
                }
            }
        }
        next += 1;
    }

    // Attach boundary pixels, each pass deciding from the previous pass's
    // assignments so the order within a pass cannot matter.
    loop {
        let snapshot = labels.clone();
        let mut assigned_any = false;
        let mut open = false;
        for idx in 0..n {
            if snapshot[idx] != u32::MAX {
                continue;
            }
            let mut votes: Vec<(u32, usize)> = Vec::with_capacity(4);
            for nb in neighbors4(idx, w, h) {
                if snapshot[nb] != u32::MAX {
                    match votes.iter_mut().find(|(r, _)| *r == snapshot[nb]) {
                        Some((_, c)) => *c += 1,
                        None => votes.push((snapshot[nb], 1)),
                    }
                }
            }
            if let Some(&(region, _)) = votes
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            {
                labels[idx] = region;
                assigned_any = true;
            } else {
                open = true;
            }
        }
        if !open {
            break;
        }
        debug_assert!(assigned_any, "disconnected boundary pixels cannot remain");
    }

    Segmentation::from_labels(w, h, labels)
}

/// Adds zero-mean Gaussian noise of the given variance to every sample and
/// clamps back to `[0, 1]`. Deterministic per seed.
pub fn add_gaussian_noise(image: &Image, variance: f64, seed: u64) -> Result<Image> {
    if variance < 0.0 {
        return Err(Error::InvalidInput(format!(
            "noise variance must be non-negative, got {variance}"
        )));
    }
    if variance == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|e| Error::InvalidInput(format!("bad noise parameters: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = image
        .samples()
        .iter()
        .map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    Image::new(image.width(), image.height(), image.channels(), samples)
}

/// Stand-in boundary map when no detector output is available: gradient
/// magnitude of the Gaussian-smoothed (sigma = 2) luminance, normalized by
/// its maximum.
pub fn fallback_boundary_map(image: &Image) -> ContourMap {
    let w = image.width();
    let h = image.height();
    let luma: Vec<f64> = (0..w * h)
        .map(|idx| {
            let [r, g, b] = image.rgb(idx);
            0.299 * r + 0.587 * g + 0.114 * b
        })
        .collect();
    let smooth = crate::features::gaussian_blur(&luma, w, h, 2.0);
    let at = |x: isize, y: isize| -> f64 {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, h as isize - 1) as usize;
        smooth[cy * w + cx]
    };
    let mut values = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y) - at(x - 1, y)) / 2.0;
            let gy = (at(x, y + 1) - at(x, y - 1)) / 2.0;
            values[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max = values.iter().fold(0.0f64, |m, &v| m.max(v));
    if max > 0.0 {
        for v in values.iter_mut() {
            *v /= max;
        }
    }
    ContourMap::new(w, h, values).expect("normalized values")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(w: usize, h: usize, labels: Vec<u32>) -> Segmentation {
        Segmentation::from_labels(w, h, labels).unwrap()
    }

    #[test]
    fn contour_of_single_region_is_zero() {
        let s = seg(3, 3, vec![0; 9]);
        assert!(seg_to_contour(&s).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn contour_of_two_columns_marks_all_four() {
        let s = seg(2, 2, vec![0, 1, 0, 1]);
        assert_eq!(seg_to_contour(&s).values(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn contour_of_centered_square_matches_enumeration_oracle() {
        // 5x5 with a centered 3x3 region; the oracle applies the two-sided
        // rule pixel by pixel.
        let mut labels = vec![0u32; 25];
        for y in 1..4 {
            for x in 1..4 {
                labels[y * 5 + x] = 1;
            }
        }
        let s = seg(5, 5, labels);
        let contour = seg_to_contour(&s);
        let mut oracle = 0;
        for idx in 0..25 {
            let differs = neighbors4(idx, 5, 5).any(|n| s.label(n) != s.label(idx));
            assert_eq!(contour.value(idx), if differs { 1.0 } else { 0.0 });
            if differs {
                oracle += 1;
            }
        }
        // 8 inner-ring pixels plus the 12 face-adjacent outer pixels.
        assert_eq!(oracle, 20);
        assert_eq!(
            contour.values().iter().filter(|&&v| v == 1.0).count(),
            oracle
        );
    }

    #[test]
    fn contour_threshold_one_gives_single_region() {
        let c = ContourMap::new(3, 3, vec![1.0; 9]).unwrap();
        let s = contour_to_segmentation(&c, 1.0).unwrap();
        assert_eq!(s.region_count(), 1);
    }

    #[test]
    fn contour_round_trip_recovers_interiors() {
        let original = seg(6, 6, (0..36).map(|i| ((i % 6) / 3) as u32).collect());
        let contour = seg_to_contour(&original);
        let recovered = contour_to_segmentation(&contour, 0.5).unwrap();
        assert_eq!(recovered.region_count(), 2);
        // Interior pixels (not on the painted boundary) keep their partition.
        for idx in 0..36 {
            if contour.value(idx) == 0.0 {
                for n in neighbors4(idx, 6, 6) {
                    if contour.value(n) == 0.0 {
                        assert_eq!(
                            original.label(idx) == original.label(n),
                            recovered.label(idx) == recovered.label(n)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn accumulated_lattice_and_threshold_nesting() {
        let a = seg(4, 4, (0..16).map(|i| (i % 4 / 2) as u32).collect());
        let b = seg(4, 4, (0..16).map(|i| (i / 8) as u32).collect());
        let c = seg(4, 4, (0..16).map(|i| (i % 4 / 2) as u32).collect());
        let maps = vec![seg_to_contour(&a), seg_to_contour(&b), seg_to_contour(&c)];
        let mean = accumulate_contours(&maps).unwrap();
        for &v in mean.values() {
            let scaled = v * 3.0;
            assert!((scaled - scaled.round()).abs() < 1e-9, "off-lattice {v}");
        }
        // Boundary sets nest as the threshold rises.
        let low: Vec<bool> = mean.values().iter().map(|&v| v > 0.2).collect();
        let high: Vec<bool> = mean.values().iter().map(|&v| v > 0.5).collect();
        for (l, h) in low.iter().zip(&high) {
            assert!(*l || !*h);
        }
        let s_low = contour_to_segmentation(&mean, 0.2).unwrap();
        let s_high = contour_to_segmentation(&mean, 0.5).unwrap();
        assert!(s_high.region_count() <= s_low.region_count());
    }

    #[test]
    fn noise_zero_variance_is_identity() {
        let img = Image::new(4, 4, 3, vec![0.5; 48]).unwrap();
        let out = add_gaussian_noise(&img, 0.0, 9).unwrap();
        assert_eq!(img, out);
    }

    #[test]
    fn noise_statistics_match_parameters() {
        let img = Image::new(100, 100, 1, vec![0.5; 10000]).unwrap();
        let out = add_gaussian_noise(&img, 0.01, 4).unwrap();
        let deltas: Vec<f64> = img
            .samples()
            .iter()
            .zip(out.samples())
            .map(|(&a, &b)| b - a)
            .collect();
        // No clamping bites at 0.5 +- a few sigma, so the sample variance of
        // the deltas estimates the configured variance.
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        let var =
            deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / deltas.len() as f64;
        assert!(
            (var - 0.01).abs() < 0.0005,
            "sample variance {var} vs nominal 0.01"
        );
        // Half-normal mean: E|X| = sqrt(2 var / pi).
        let mean_abs = deltas.iter().map(|d| d.abs()).sum::<f64>() / deltas.len() as f64;
        let expected = (2.0 * 0.01 / std::f64::consts::PI).sqrt();
        assert!((mean_abs - expected).abs() < 0.05 * expected);
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let img = Image::new(8, 8, 3, vec![0.3; 192]).unwrap();
        let a = add_gaussian_noise(&img, 0.001, 7).unwrap();
        let b = add_gaussian_noise(&img, 0.001, 7).unwrap();
        assert_eq!(a, b);
        let c = add_gaussian_noise(&img, 0.001, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn manifest_round_trip() {
        let text = "train\timg/a.png\tpb/a.png\tgt/a1.png;gt/a2.png\n\
                    test\timg/b.png\t-\tgt/b.png\n";
        let manifest = DatasetManifest::parse(text).unwrap();
        assert_eq!(manifest.entries.len(), 2);
        assert_eq!(manifest.entries[0].gts.len(), 2);
        assert!(manifest.entries[1].pb.is_none());
        assert_eq!(manifest.split("train").len(), 1);
        let round = DatasetManifest::parse(&manifest.render()).unwrap();
        assert_eq!(manifest, round);
    }

    #[test]
    fn manifest_requires_ground_truth() {
        assert!(DatasetManifest::parse("train\ta.png\tb.png\t\n").is_err());
        assert!(DatasetManifest::parse("train\ta.png\tb.png\n").is_err());
    }

    #[test]
    fn fallback_boundary_map_peaks_on_edges() {
        let w = 32;
        let h = 16;
        let mut samples = vec![0.2; w * h * 3];
        for y in 0..h {
            for x in w / 2..w {
                let base = (y * w + x) * 3;
                samples[base] = 0.9;
                samples[base + 1] = 0.9;
                samples[base + 2] = 0.9;
            }
        }
        let img = Image::new(w, h, 3, samples).unwrap();
        let pb = fallback_boundary_map(&img);
        let mid = pb.value(h / 2 * w + w / 2);
        let corner = pb.value(0);
        assert!(mid > 0.9, "edge response {mid}");
        assert!(corner < 0.05, "flat response {corner}");
    }

    fn tiny_dataset(count: usize, seed: u64) -> Vec<DatasetItem> {
        let cfg = crate::synth::SynthConfig {
            count,
            width: 40,
            height: 40,
            seed,
            ..crate::synth::SynthConfig::default()
        };
        crate::synth::generate(&cfg)
            .into_iter()
            .map(|item| {
                let pb = fallback_boundary_map(&item.image);
                DatasetItem {
                    name: item.name,
                    image: item.image,
                    pb,
                    gts: vec![item.gt],
                }
            })
            .collect()
    }

    fn tiny_config() -> PipelineConfig {
        PipelineConfig {
            iterations: 1,
            forest: ForestParams {
                tree_count: 15,
                ..ForestParams::default()
            },
            pre_merge_min_size: 10,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn iterative_training_grows_sample_union() {
        let items = tiny_dataset(2, 11);
        let config = tiny_config();
        let series = train_iterative(&items, &[], &config).unwrap();
        assert_eq!(series.levels.len(), 1);
        let reports = &series.levels[0].reports;
        assert_eq!(reports.len(), 2);
        assert!(reports[1].samples_total >= reports[0].samples_total);
    }

    #[test]
    fn zero_iterations_yield_single_classifier() {
        let items = tiny_dataset(1, 3);
        let config = PipelineConfig {
            iterations: 0,
            ..tiny_config()
        };
        let series = train_iterative(&items, &[], &config).unwrap();
        assert_eq!(series.levels[0].classifiers.len(), 1);
    }

    #[test]
    fn duplicate_items_collapse_to_identical_sample_set() {
        let items = tiny_dataset(1, 5);
        let mut doubled = items.clone();
        doubled.push(DatasetItem {
            name: "copy".into(),
            ..items[0].clone()
        });
        let config = tiny_config();
        let single = train_iterative(&items, &[], &config).unwrap();
        let twice = train_iterative(&doubled, &[], &config).unwrap();
        assert_eq!(
            single.levels[0].reports[0].samples_total,
            twice.levels[0].reports[0].samples_total
        );
    }

    #[test]
    fn segmentation_accumulates_on_lattice_and_is_deterministic() {
        let items = tiny_dataset(2, 21);
        let config = tiny_config();
        let series = train_iterative(&items, &[], &config).unwrap();
        let maps = segment_iterative(&items, &series, &config).unwrap();
        assert_eq!(maps.len(), 2);
        let denom = (series.levels.len() * series.levels[0].classifiers.len()) as f64;
        for map in &maps {
            for &v in map.values() {
                let scaled = v * denom;
                assert!((scaled - scaled.round()).abs() < 1e-9);
            }
        }
        let again = segment_iterative(&items, &series, &config).unwrap();
        for (a, b) in maps.iter().zip(&again) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn single_entry_series_yields_binary_maps() {
        let items = tiny_dataset(1, 31);
        let config = PipelineConfig {
            iterations: 0,
            ..tiny_config()
        };
        let series = train_iterative(&items, &[], &config).unwrap();
        let maps = segment_iterative(&items, &series, &config).unwrap();
        for &v in maps[0].values() {
            assert!(v == 0.0 || v == 1.0);
        }
    }

    #[test]
    fn training_on_item_without_pb_dimensions_fails_with_name() {
        let mut items = tiny_dataset(1, 41);
        items[0].pb = ContourMap::new(3, 3, vec![0.0; 9]).unwrap();
        let err = train_iterative(&items, &[], &tiny_config()).unwrap_err();
        assert!(err.to_string().contains("synth000"), "{err}");
    }

    #[test]
    fn multiple_detail_levels_train_one_series_each() {
        let mut items = tiny_dataset(2, 51);
        for item in &mut items {
            let w = item.image.width();
            let h = item.image.height();
            let coarse = Segmentation::from_labels(w, h, vec![0; w * h]).unwrap();
            item.gts.push(coarse);
        }
        let config = tiny_config();
        let series = train_iterative(&items, &[], &config).unwrap();
        assert_eq!(series.levels.len(), 2);
        let maps = segment_iterative_maps(&items, &series, &config).unwrap();
        // levels * (T + 1) maps per image.
        assert_eq!(maps[0].len(), 2 * 2);
    }
}
