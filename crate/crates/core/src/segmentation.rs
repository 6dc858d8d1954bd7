//! Canonical image and segmentation types plus label-map hygiene operations.
//!
//! A [`Segmentation`] partitions the pixel grid into 4-connected regions
//! labeled `0..R-1` in row-major first-occurrence order. The two hygiene
//! operations, [`connected_components`] and [`Segmentation::canonicalize`],
//! establish and preserve that form. All types are immutable after
//! construction and safe to share across threads.

use crate::error::{Error, Result};

/// Raster image with samples in `[0, 1]`, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<f64>,
}

impl Image {
    /// `channels` must be 1 (gray) or 3 (RGB); samples row-major interleaved.
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty("image"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if samples.len() != width * height * channels {
            return Err(Error::LabelMapSize {
                expected: width * height * channels,
                got: samples.len(),
            });
        }
        if samples.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(
                "image samples must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Channel `c` of the pixel at row-major index `idx`.
    #[inline]
    pub fn sample(&self, idx: usize, c: usize) -> f64 {
        self.samples[idx * self.channels + c]
    }

    /// RGB triple at `idx`; gray images replicate the single channel.
    #[inline]
    pub fn rgb(&self, idx: usize) -> [f64; 3] {
        if self.channels == 3 {
            let base = idx * 3;
            [
                self.samples[base],
                self.samples[base + 1],
                self.samples[base + 2],
            ]
        } else {
            let v = self.samples[idx];
            [v, v, v]
        }
    }
}

/// Per-pixel real-valued boundary strength in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ContourMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty("contour map"));
        }
        if values.len() != width * height {
            return Err(Error::LabelMapSize {
                expected: width * height,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(
                "contour values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn same_size(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::DimensionMismatch {
                expected_width: width,
                expected_height: height,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }
}

/// Partition of the pixel grid into labeled regions.
///
/// Canonical form: labels are exactly `0..region_count`, assigned in order of
/// first row-major occurrence. Constructors here canonicalize but do not
/// verify 4-connectivity; [`connected_components`] establishes it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    region_count: usize,
}

impl Segmentation {
    /// Builds a canonical segmentation from a raw label map, trusting that
    /// equal-labeled pixel sets are connected.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty("segmentation"));
        }
        if labels.len() != width * height {
            return Err(Error::LabelMapSize {
                expected: width * height,
                got: labels.len(),
            });
        }
        let (labels, region_count) = relabel_first_occurrence(&labels);
        Ok(Self {
            width,
            height,
            labels,
            region_count,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, idx: usize) -> u32 {
        self.labels[idx]
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    /// Pixel counts per region id.
    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.region_count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Relabels regions to `0..R-1` in first-occurrence order. Idempotent.
    pub fn canonicalize(&self) -> Segmentation {
        let (labels, region_count) = relabel_first_occurrence(&self.labels);
        Segmentation {
            width: self.width,
            height: self.height,
            labels,
            region_count,
        }
    }

    pub fn same_size(&self, other: &Segmentation) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                expected_width: self.width,
                expected_height: self.height,
                width: other.width,
                height: other.height,
            });
        }
        Ok(())
    }
}

fn relabel_first_occurrence(labels: &[u32]) -> (Vec<u32>, usize) {
    let mut map: std::collections::HashMap<u32, u32> = std::collections::HashMap::new();
    let mut next = 0u32;
    let out = labels
        .iter()
        .map(|&l| {
            *map.entry(l).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            })
        })
        .collect();
    (out, next as usize)
}

/// The four grid neighbors of `idx`, in up/left/right/down order.
#[inline]
pub fn neighbors4(idx: usize, width: usize, height: usize) -> impl Iterator<Item = usize> {
    let x = idx % width;
    let y = idx / width;
    let mut out = [usize::MAX; 4];
    let mut n = 0;
    if y > 0 {
        out[n] = idx - width;
        n += 1;
    }
    if x > 0 {
        out[n] = idx - 1;
        n += 1;
    }
    if x + 1 < width {
        out[n] = idx + 1;
        n += 1;
    }
    if y + 1 < height {
        out[n] = idx + width;
        n += 1;
    }
    out.into_iter().take(n)
}

/// Splits each input label into its 4-connected components and canonicalizes.
///
/// Pixels that share an input label but are not 4-connected receive distinct
/// output ids.
pub fn connected_components(width: usize, height: usize, labels: &[u32]) -> Result<Segmentation> {
    if width == 0 || height == 0 {
        return Err(Error::Empty("label map"));
    }
    if labels.len() != width * height {
        return Err(Error::LabelMapSize {
            expected: width * height,
            got: labels.len(),
        });
    }
    let mut out = vec![u32::MAX; labels.len()];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if out[start] != u32::MAX {
            continue;
        }
        let input = labels[start];
        out[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            for n in neighbors4(p, width, height) {
                if out[n] == u32::MAX && labels[n] == input {
                    out[n] = next;
                    stack.push(n);
                }
            }
        }
        next += 1;
    }
    // Scanning in row-major order already yields first-occurrence ids.
    Ok(Segmentation {
        width,
        height,
        labels: out,
        region_count: next as usize,
    })
}
