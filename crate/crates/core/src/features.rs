//! Region-pair features for the boundary classifier.
//!
//! The default vector has 41 dimensions in four blocks: geometry (5),
//! boundary statistics (4), color (24), and texture (8). Color features
//! compare per-region 10-bin histograms and means of the LAB and HSV
//! components; texture features compare 16-bin histograms of oriented
//! gradient energy at four orientations. Every per-pixel plane is normalized
//! to `[0, 1]` over its nominal range, so the histogram grids are fixed and
//! the extraction is deterministic.
//!
//! Per-region statistics are additive: [`RegionStats`] of a merged region is
//! the sum of its parts, which lets the merge-tree builder maintain them
//! incrementally instead of rescanning pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::{ContourMap, Image};

pub const COLOR_BINS: usize = 10;
pub const TEX_BINS: usize = 16;
pub const TEX_ORIENTATIONS: usize = 4;
const COLOR_COMPONENTS: usize = 6;

/// Named feature blocks with their widths, in vector order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub blocks: Vec<(String, usize)>,
}

impl FeatureLayout {
    pub fn len(&self) -> usize {
        self.blocks.iter().map(|(_, d)| d).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column names, `block[k]` style, for feature matrix dumps.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len());
        for (block, dims) in &self.blocks {
            for k in 0..*dims {
                names.push(format!("{block}[{k}]"));
            }
        }
        names
    }

    pub fn check(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::LayoutMismatch {
                expected: self.len(),
                got: values.len(),
            });
        }
        Ok(())
    }
}

impl Default for FeatureLayout {
    fn default() -> Self {
        FeatureLayout {
            blocks: vec![
                ("geometry".into(), 5),
                ("boundary".into(), 4),
                ("color".into(), 24),
                ("texture".into(), 8),
            ],
        }
    }
}

/// Fixed-length feature vector; all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

/// Per-pixel planes derived from the image alone: normalized LAB and HSV
/// components plus oriented gradient energy. Independent of boundary maps,
/// so region statistics can be accumulated before any saliency exists.
#[derive(Debug, Clone)]
pub struct PixelPlanes {
    width: usize,
    height: usize,
    /// L, a, b, H, S, V, each normalized to [0, 1].
    color: [Vec<f64>; COLOR_COMPONENTS],
    /// Gradient energy per orientation (0, 45, 90, 135 degrees), normalized
    /// to [0, 1] by the global maximum across orientations.
    texture: [Vec<f64>; TEX_ORIENTATIONS],
}

impl PixelPlanes {
    pub fn new(image: &Image) -> Self {
        let n = image.pixel_count();
        let mut color: [Vec<f64>; COLOR_COMPONENTS] =
            std::array::from_fn(|_| Vec::with_capacity(n));
        let mut luma = Vec::with_capacity(n);
        for idx in 0..n {
            let [r, g, b] = image.rgb(idx);
            let (l, la, lb) = rgb_to_lab(r, g, b);
            let (hh, s, v) = rgb_to_hsv(r, g, b);
            color[0].push((l / 100.0).clamp(0.0, 1.0));
            color[1].push(((la + 128.0) / 255.0).clamp(0.0, 1.0));
            color[2].push(((lb + 128.0) / 255.0).clamp(0.0, 1.0));
            color[3].push((hh / 360.0).clamp(0.0, 1.0));
            color[4].push(s.clamp(0.0, 1.0));
            color[5].push(v.clamp(0.0, 1.0));
            luma.push(0.299 * r + 0.587 * g + 0.114 * b);
        }
        let texture = oriented_gradient_energy(&luma, image.width(), image.height());
        PixelPlanes {
            width: image.width(),
            height: image.height(),
            color,
            texture,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Everything feature extraction needs: pixel planes plus the two boundary
/// maps sampled along pair boundaries.
#[derive(Debug, Clone)]
pub struct FeatureContext {
    pub planes: PixelPlanes,
    pub pb: ContourMap,
    /// Hierarchy-strength map standing in for an ultrametric contour map.
    pub saliency: ContourMap,
    pub layout: FeatureLayout,
}

impl FeatureContext {
    pub fn new(planes: PixelPlanes, pb: ContourMap, saliency: ContourMap) -> Result<Self> {
        pb.same_size(planes.width, planes.height)?;
        saliency.same_size(planes.width, planes.height)?;
        Ok(FeatureContext {
            planes,
            pb,
            saliency,
            layout: FeatureLayout::default(),
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.planes.width * self.planes.height
    }
}

/// Additive per-region color and texture accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub pixels: usize,
    comp_sum: [f64; COLOR_COMPONENTS],
    color_hist: [[u32; COLOR_BINS]; COLOR_COMPONENTS],
    tex_hist: [[u32; TEX_BINS]; TEX_ORIENTATIONS],
}

impl RegionStats {
    pub fn empty() -> Self {
        RegionStats {
            pixels: 0,
            comp_sum: [0.0; COLOR_COMPONENTS],
            color_hist: [[0; COLOR_BINS]; COLOR_COMPONENTS],
            tex_hist: [[0; TEX_BINS]; TEX_ORIENTATIONS],
        }
    }

    pub fn add_pixel(&mut self, planes: &PixelPlanes, idx: usize) {
        self.pixels += 1;
        for c in 0..COLOR_COMPONENTS {
            let v = planes.color[c][idx];
            self.comp_sum[c] += v;
            self.color_hist[c][bin_index(v, COLOR_BINS)] += 1;
        }
        for o in 0..TEX_ORIENTATIONS {
            self.tex_hist[o][bin_index(planes.texture[o][idx], TEX_BINS)] += 1;
        }
    }

    pub fn from_pixels(planes: &PixelPlanes, pixels: impl IntoIterator<Item = usize>) -> Self {
        let mut s = RegionStats::empty();
        for p in pixels {
            s.add_pixel(planes, p);
        }
        s
    }

    /// Statistics of the union of two disjoint regions.
    pub fn merged(&self, other: &RegionStats) -> RegionStats {
        let mut out = self.clone();
        out.pixels += other.pixels;
        for c in 0..COLOR_COMPONENTS {
            out.comp_sum[c] += other.comp_sum[c];
            for b in 0..COLOR_BINS {
                out.color_hist[c][b] += other.color_hist[c][b];
            }
        }
        for o in 0..TEX_ORIENTATIONS {
            for b in 0..TEX_BINS {
                out.tex_hist[o][b] += other.tex_hist[o][b];
            }
        }
        out
    }
}

#[inline]
fn bin_index(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

/// Normalizes histogram counts to a distribution; an all-zero histogram maps
/// to the uniform distribution so downstream distances stay defined.
pub fn normalize_hist(counts: &[u32]) -> Vec<f64> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return vec![1.0 / counts.len() as f64; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// L1 distance, chi-squared distance, and absolute entropy difference between
/// two normalized histograms. Natural log; 0-mass terms contribute nothing.
pub fn histogram_distances(h1: &[f64], h2: &[f64]) -> Result<(f64, f64, f64)> {
    if h1.len() != h2.len() {
        return Err(Error::HistogramBins {
            a: h1.len(),
            b: h2.len(),
        });
    }
    let mut l1 = 0.0;
    let mut chi2 = 0.0;
    for (&a, &b) in h1.iter().zip(h2) {
        l1 += (a - b).abs();
        let s = a + b;
        if s > 0.0 {
            chi2 += (a - b) * (a - b) / s;
        }
    }
    chi2 *= 0.5;
    let entropy = |h: &[f64]| -> f64 {
        h.iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    };
    Ok((l1, chi2, (entropy(h1) - entropy(h2)).abs()))
}

fn mean_and_median(map: &ContourMap, pixels: &[u32]) -> (f64, f64) {
    let mut vals: Vec<f64> = pixels.iter().map(|&p| map.value(p as usize)).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.sort_unstable_by(f64::total_cmp);
    let m = vals.len();
    let median = if m % 2 == 1 {
        vals[m / 2]
    } else {
        0.5 * (vals[m / 2 - 1] + vals[m / 2])
    };
    (mean, median)
}

/// Extracts the pair feature vector for two adjacent regions.
///
/// The pair is ordered internally by (size, perimeter) before assembly, so
/// the result is symmetric in its two region arguments. Perimeters are in
/// unit pixel edges.
pub fn extract_pair_features(
    ctx: &FeatureContext,
    a: &RegionStats,
    b: &RegionStats,
    boundary: &[u32],
    perim_a: usize,
    perim_b: usize,
) -> Result<FeatureVector> {
    if boundary.is_empty() {
        return Err(Error::Empty("boundary pixel set"));
    }
    if a.pixels == 0 || b.pixels == 0 {
        return Err(Error::Empty("region"));
    }
    let (a, b, perim_a, perim_b) =
        if (a.pixels, perim_a) <= (b.pixels, perim_b) {
            (a, b, perim_a, perim_b)
        } else {
            (b, a, perim_b, perim_a)
        };

    let total = ctx.pixel_count() as f64;
    let diag = ((ctx.planes.width * ctx.planes.width
        + ctx.planes.height * ctx.planes.height) as f64)
        .sqrt();

    let mut values = Vec::with_capacity(ctx.layout.len());

    // Geometry.
    values.push(a.pixels as f64 / total);
    values.push(b.pixels as f64 / total);
    values.push(perim_a as f64 / diag);
    values.push(perim_b as f64 / diag);
    values.push(boundary.len() as f64 / diag);

    // Boundary statistics over the shared boundary set.
    let (pb_mean, pb_median) = mean_and_median(&ctx.pb, boundary);
    let (sal_mean, sal_median) = mean_and_median(&ctx.saliency, boundary);
    values.push(pb_mean);
    values.push(pb_median);
    values.push(sal_mean);
    values.push(sal_median);

    // Color: per component, |mean difference| plus histogram distances.
    for c in 0..COLOR_COMPONENTS {
        let mean_a = a.comp_sum[c] / a.pixels as f64;
        let mean_b = b.comp_sum[c] / b.pixels as f64;
        let ha = normalize_hist(&a.color_hist[c]);
        let hb = normalize_hist(&b.color_hist[c]);
        let (l1, chi2, ent) = histogram_distances(&ha, &hb)?;
        values.push((mean_a - mean_b).abs());
        values.push(l1);
        values.push(chi2);
        values.push(ent);
    }

    // Texture: histogram distances per orientation.
    for o in 0..TEX_ORIENTATIONS {
        let ha = normalize_hist(&a.tex_hist[o]);
        let hb = normalize_hist(&b.tex_hist[o]);
        let (l1, chi2, _) = histogram_distances(&ha, &hb)?;
        values.push(l1);
        values.push(chi2);
    }

    debug_assert_eq!(values.len(), ctx.layout.len());
    debug_assert!(values.iter().all(|v| v.is_finite()));
    Ok(FeatureVector { values })
}

/// Tab-separated feature matrix with a header row naming each column, for
/// cross-implementation regression comparisons.
pub fn feature_matrix_tsv(vectors: &[FeatureVector], layout: &FeatureLayout) -> Result<String> {
    let mut out = layout.column_names().join("\t");
    out.push('\n');
    for fv in vectors {
        layout.check(&fv.values)?;
        let row: Vec<String> = fv.values.iter().map(|v| format!("{v:.12}")).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    Ok(out)
}

/// Separable Gaussian blur with border replication; kernel radius `3*sigma`.
pub fn gaussian_blur(values: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for k in -radius..=radius {
        kernel.push((-(k * k) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }

    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0; values.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + ki as isize - radius, width);
                acc += k * values[y * width + sx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; values.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + ki as isize - radius, height);
                acc += k * tmp[sy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Absolute directional derivatives of the lightly smoothed luminance at
/// 0/45/90/135 degrees, jointly normalized to [0, 1].
fn oriented_gradient_energy(
    luma: &[f64],
    width: usize,
    height: usize,
) -> [Vec<f64>; TEX_ORIENTATIONS] {
    let smooth = gaussian_blur(luma, width, height, 1.0);
    let at = |x: isize, y: isize| -> f64 {
        let cx = x.clamp(0, width as isize - 1) as usize;
        let cy = y.clamp(0, height as isize - 1) as usize;
        smooth[cy * width + cx]
    };
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut planes: [Vec<f64>; TEX_ORIENTATIONS] =
        std::array::from_fn(|_| vec![0.0; width * height]);
    for y in 0..height as isize {
        for x in 0..width as isize {
            let idx = y as usize * width + x as usize;
            planes[0][idx] = (at(x + 1, y) - at(x - 1, y)).abs() / 2.0;
            planes[1][idx] = (at(x + 1, y - 1) - at(x - 1, y + 1)).abs() / (2.0 * sqrt2);
            planes[2][idx] = (at(x, y + 1) - at(x, y - 1)).abs() / 2.0;
            planes[3][idx] = (at(x + 1, y + 1) - at(x - 1, y - 1)).abs() / (2.0 * sqrt2);
        }
    }
    let max = planes
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, &v| m.max(v));
    if max > 0.0 {
        for p in planes.iter_mut() {
            for v in p.iter_mut() {
                *v /= max;
            }
        }
    }
    planes
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB in [0,1] to CIELAB under D65.
fn rgb_to_lab(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let rl = srgb_to_linear(r);
    let gl = srgb_to_linear(g);
    let bl = srgb_to_linear(b);
    let x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    let y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    let z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    let f = |t: f64| {
        if t > 0.008856 {
            t.cbrt()
        } else {
            7.787 * t + 16.0 / 116.0
        }
    };
    let fx = f(x / 0.95047);
    let fy = f(y);
    let fz = f(z / 1.08883);
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

/// RGB in [0,1] to HSV with H in degrees [0, 360).
fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}
