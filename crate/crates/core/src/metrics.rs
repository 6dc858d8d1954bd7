//! Region-based segmentation metrics and the ODS/OIS evaluation harness.
//!
//! Covering is the size-weighted best-IoU match of proposal regions onto
//! ground-truth regions; the Rand index is the fraction of pixel pairs on
//! which two labelings agree (computed from the confusion table, not the
//! quadratic pair loop); the variation of information is the symmetric sum
//! of conditional entropies in nats. The harness thresholds contour-map
//! hierarchies over a grid, scores every image against all of its ground
//! truths, and reports both the best shared threshold (ODS) and the mean of
//! per-image best scores (OIS).

use rayon::prelude::*;

use crate::error::Result;
use crate::pipeline::contour_to_segmentation;
use crate::segmentation::{ContourMap, Segmentation};

/// Joint pixel counts between a proposal and a ground truth, with marginals.
#[derive(Debug, Clone)]
pub struct ConfusionTable {
    pub rows: usize,
    pub cols: usize,
    pub counts: Vec<u64>,
    pub row_marginals: Vec<u64>,
    pub col_marginals: Vec<u64>,
    pub total: u64,
}

impl ConfusionTable {
    pub fn new(s: &Segmentation, gt: &Segmentation) -> Result<Self> {
        s.same_size(gt)?;
        let rows = s.region_count();
        let cols = gt.region_count();
        let mut counts = vec![0u64; rows * cols];
        for (a, g) in s.labels().iter().zip(gt.labels()) {
            counts[*a as usize * cols + *g as usize] += 1;
        }
        let mut row_marginals = vec![0u64; rows];
        let mut col_marginals = vec![0u64; cols];
        for r in 0..rows {
            for c in 0..cols {
                let v = counts[r * cols + c];
                row_marginals[r] += v;
                col_marginals[c] += v;
            }
        }
        Ok(ConfusionTable {
            rows,
            cols,
            counts,
            row_marginals,
            col_marginals,
            total: s.pixel_count() as u64,
        })
    }

    #[inline]
    pub fn count(&self, r: usize, c: usize) -> u64 {
        self.counts[r * self.cols + c]
    }
}

/// Size-weighted sum of each proposal region's best IoU with any ground-truth
/// region; 1 iff the partitions coincide.
pub fn segmentation_covering(s: &Segmentation, gt: &Segmentation) -> Result<f64> {
    let table = ConfusionTable::new(s, gt)?;
    let n = table.total as f64;
    let mut covering = 0.0;
    for r in 0..table.rows {
        let mut best = 0.0f64;
        for c in 0..table.cols {
            let inter = table.count(r, c);
            if inter == 0 {
                continue;
            }
            let union = table.row_marginals[r] + table.col_marginals[c] - inter;
            best = best.max(inter as f64 / union as f64);
        }
        covering += table.row_marginals[r] as f64 / n * best;
    }
    Ok(covering)
}

/// Fraction of pixel pairs labeled consistently (together in both or apart in
/// both), computed from the confusion table in O(labels^2).
pub fn rand_index(s: &Segmentation, gt: &Segmentation) -> Result<f64> {
    let table = ConfusionTable::new(s, gt)?;
    let pairs = |c: u64| -> u128 {
        let c = c as u128;
        c.saturating_sub(1) * c / 2
    };
    let total_pairs = pairs(table.total);
    if total_pairs == 0 {
        return Ok(1.0);
    }
    let same_same: u128 = table.counts.iter().map(|&c| pairs(c)).sum();
    let same_s: u128 = table.row_marginals.iter().map(|&c| pairs(c)).sum();
    let same_gt: u128 = table.col_marginals.iter().map(|&c| pairs(c)).sum();
    // agreements = same-in-both + different-in-both
    let agree = total_pairs + 2 * same_same - same_s - same_gt;
    Ok(agree as f64 / total_pairs as f64)
}

/// Mean Rand index over multiple ground truths.
pub fn probabilistic_rand(s: &Segmentation, gts: &[Segmentation]) -> Result<f64> {
    if gts.is_empty() {
        return Err(crate::error::Error::Empty("ground-truth list"));
    }
    let mut sum = 0.0;
    for gt in gts {
        sum += rand_index(s, gt)?;
    }
    Ok(sum / gts.len() as f64)
}

/// Symmetric sum of conditional entropies, in nats; 0 iff the partitions
/// coincide up to relabeling.
pub fn variation_of_information(s: &Segmentation, gt: &Segmentation) -> Result<f64> {
    let table = ConfusionTable::new(s, gt)?;
    let n = table.total as f64;
    let mut vi = 0.0;
    for r in 0..table.rows {
        for c in 0..table.cols {
            let count = table.count(r, c);
            if count == 0 {
                continue;
            }
            let p = count as f64 / n;
            let pr = table.row_marginals[r] as f64 / n;
            let pc = table.col_marginals[c] as f64 / n;
            // H(S|Sg) term + H(Sg|S) term for this joint cell.
            vi += p * (pc / p).ln() + p * (pr / p).ln();
        }
    }
    Ok(vi.max(0.0))
}

/// Scores for one proposal against one image's ground truths, averaged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricScores {
    pub covering: f64,
    pub pri: f64,
    pub vi: f64,
}

/// Per-image, per-threshold raw scores plus the ODS/OIS aggregates.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// `scores[image][threshold]`.
    pub scores: Vec<Vec<MetricScores>>,
    /// (value, optimal threshold) pairs.
    pub ods_covering: (f64, f64),
    pub ods_pri: (f64, f64),
    pub ods_vi: (f64, f64),
    pub ois_covering: f64,
    pub ois_pri: f64,
    pub ois_vi: f64,
}

/// The 99-threshold grid 0.01..=0.99.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

/// Thresholds every contour map over the grid, scores each segmentation
/// against all ground truths of its image, and aggregates at the optimal
/// dataset scale and the optimal image scale.
pub fn evaluate_ods_ois(
    contours: &[ContourMap],
    gts: &[Vec<Segmentation>],
    thresholds: &[f64],
) -> Result<EvalReport> {
    if contours.is_empty() || contours.len() != gts.len() {
        return Err(crate::error::Error::InvalidInput(format!(
            "evaluation needs matching nonempty inputs, got {} contours and {} ground-truth lists",
            contours.len(),
            gts.len()
        )));
    }
    if gts.iter().any(|g| g.is_empty()) {
        return Err(crate::error::Error::Empty("ground-truth list"));
    }

    let scores: Vec<Vec<MetricScores>> = contours
        .par_iter()
        .zip(gts.par_iter())
        .map(|(contour, image_gts)| {
            thresholds
                .iter()
                .map(|&t| {
                    let seg = contour_to_segmentation(contour, t)?;
                    let mut acc = MetricScores {
                        covering: 0.0,
                        pri: 0.0,
                        vi: 0.0,
                    };
                    for gt in image_gts {
                        acc.covering += segmentation_covering(&seg, gt)?;
                        acc.pri += rand_index(&seg, gt)?;
                        acc.vi += variation_of_information(&seg, gt)?;
                    }
                    let k = image_gts.len() as f64;
                    acc.covering /= k;
                    acc.pri /= k;
                    acc.vi /= k;
                    Ok(acc)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let images = scores.len() as f64;
    let ods = |pick: fn(&MetricScores) -> f64, maximize: bool| -> (f64, f64) {
        let mut best: Option<(f64, f64)> = None;
        for (ti, &t) in thresholds.iter().enumerate() {
            let mean: f64 = scores.iter().map(|img| pick(&img[ti])).sum::<f64>() / images;
            let better = match best {
                None => true,
                Some((b, _)) => {
                    if maximize {
                        mean > b
                    } else {
                        mean < b
                    }
                }
            };
            if better {
                best = Some((mean, t));
            }
        }
        best.expect("nonempty threshold grid")
    };
    let ois = |pick: fn(&MetricScores) -> f64, maximize: bool| -> f64 {
        scores
            .iter()
            .map(|img| {
                img.iter()
                    .map(pick)
                    .fold(if maximize { f64::MIN } else { f64::MAX }, |a, b| {
                        if maximize {
                            a.max(b)
                        } else {
                            a.min(b)
                        }
                    })
            })
            .sum::<f64>()
            / images
    };

    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        ods_covering: ods(|s| s.covering, true),
        ods_pri: ods(|s| s.pri, true),
        ods_vi: ods(|s| s.vi, false),
        ois_covering: ois(|s| s.covering, true),
        ois_pri: ois(|s| s.pri, true),
        ois_vi: ois(|s| s.vi, false),
        scores,
    })
}

impl EvalReport {
    /// Tab-separated raw table: one row per (image, threshold).
    pub fn to_tsv(&self, names: &[String]) -> String {
        let mut out = String::from("image\tthreshold\tcovering\tpri\tvi\n");
        for (i, img) in self.scores.iter().enumerate() {
            let name = names.get(i).map(String::as_str).unwrap_or("?");
            for (ti, s) in img.iter().enumerate() {
                out.push_str(&format!(
                    "{}\t{:.2}\t{:.6}\t{:.6}\t{:.6}\n",
                    name, self.thresholds[ti], s.covering, s.pri, s.vi
                ));
            }
        }
        out
    }

    /// One-line summary in Covering/PRI/VI x ODS/OIS column order.
    pub fn summary_line(&self) -> String {
        format!(
            "Covering ODS {:.4} (t={:.2}) OIS {:.4} | PRI ODS {:.4} (t={:.2}) OIS {:.4} | VI ODS {:.4} (t={:.2}) OIS {:.4}",
            self.ods_covering.0,
            self.ods_covering.1,
            self.ois_covering,
            self.ods_pri.0,
            self.ods_pri.1,
            self.ois_pri,
            self.ods_vi.0,
            self.ods_vi.1,
            self.ois_vi,
        )
    }
}
