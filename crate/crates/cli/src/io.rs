//! File formats: 8-bit rasters for images, 16-bit grayscale rasters for
//! boundary maps, contour maps, and label maps, JSON for models and series
//! indexes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use treeseg_core::classifier::EnsembleClassifier;
use treeseg_core::pipeline::{ClassifierSeries, IterationReport, LevelSeries, SeriesSnapshot};
use treeseg_core::segmentation::{ContourMap, Image, Segmentation};

pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).with_context(|| format!("reading image {}", path.display()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(gray) => {
            let samples = gray.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            Ok(Image::new(w, h, 1, samples)?)
        }
        DynamicImage::ImageLuma16(gray) => {
            let samples = gray.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
            Ok(Image::new(w, h, 1, samples)?)
        }
        other => {
            let rgb = other.to_rgb8();
            let mut samples = Vec::with_capacity(w * h * 3);
            for p in rgb.pixels() {
                samples.push(p.0[0] as f64 / 255.0);
                samples.push(p.0[1] as f64 / 255.0);
                samples.push(p.0[2] as f64 / 255.0);
            }
            Ok(Image::new(w, h, 3, samples)?)
        }
    }
}

pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    let w = image.width() as u32;
    let h = image.height() as u32;
    if image.channels() == 1 {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(w, h, |x, y| {
            let v = image.sample((y * w + x) as usize, 0);
            Luma([(v * 255.0).round() as u8])
        });
        buf.save(path)
            .with_context(|| format!("writing image {}", path.display()))?;
    } else {
        let buf = image::RgbImage::from_fn(w, h, |x, y| {
            let [r, g, b] = image.rgb((y * w + x) as usize);
            image::Rgb([
                (r * 255.0).round() as u8,
                (g * 255.0).round() as u8,
                (b * 255.0).round() as u8,
            ])
        });
        buf.save(path)
            .with_context(|| format!("writing image {}", path.display()))?;
    }
    Ok(())
}

/// Boundary and contour maps: 16-bit grayscale, value/65535.
pub fn load_contour(path: &Path) -> Result<ContourMap> {
    let img = image::open(path)
        .with_context(|| format!("reading contour map {}", path.display()))?;
    let gray = img.to_luma16();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let values = gray.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
    Ok(ContourMap::new(w, h, values)?)
}

pub fn save_contour(path: &Path, map: &ContourMap) -> Result<()> {
    let w = map.width() as u32;
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(w, map.height() as u32, |x, y| {
            let v = map.value((y * w + x) as usize);
            Luma([(v * 65535.0).round() as u16])
        });
    buf.save(path)
        .with_context(|| format!("writing contour map {}", path.display()))?;
    Ok(())
}

/// Label maps: 16-bit grayscale rasters of raw region ids.
pub fn load_labels(path: &Path) -> Result<Segmentation> {
    let img = image::open(path)
        .with_context(|| format!("reading label map {}", path.display()))?;
    let gray = img.to_luma16();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let labels = gray.pixels().map(|p| p.0[0] as u32).collect();
    Ok(Segmentation::from_labels(w, h, labels)?)
}

pub fn save_labels(path: &Path, seg: &Segmentation) -> Result<()> {
    if seg.region_count() > u16::MAX as usize + 1 {
        bail!(
            "segmentation has {} regions; 16-bit label maps cap at 65536",
            seg.region_count()
        );
    }
    let w = seg.width() as u32;
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(w, seg.height() as u32, |x, y| {
            Luma([seg.label((y * w + x) as usize) as u16])
        });
    buf.save(path)
        .with_context(|| format!("writing label map {}", path.display()))?;
    Ok(())
}

/// Index document tying a series snapshot to its per-iteration model files.
#[derive(Serialize, Deserialize)]
pub struct SeriesIndex {
    pub snapshot: SeriesSnapshot,
    /// `models[level][iteration]` file names relative to the index.
    pub models: Vec<Vec<String>>,
    pub reports: Vec<Vec<IterationReport>>,
}

pub fn save_series(dir: &Path, series: &ClassifierSeries) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut models = Vec::new();
    let mut reports = Vec::new();
    for (level, ls) in series.levels.iter().enumerate() {
        let mut level_files = Vec::new();
        for (t, classifier) in ls.classifiers.iter().enumerate() {
            let name = format!("model_L{level}_T{t}.json");
            fs::write(dir.join(&name), classifier.to_json())
                .with_context(|| format!("writing model {name}"))?;
            level_files.push(name);
        }
        models.push(level_files);
        reports.push(ls.reports.clone());
    }
    let index = SeriesIndex {
        snapshot: series.snapshot.clone(),
        models,
        reports,
    };
    fs::write(
        dir.join("series.json"),
        serde_json::to_string_pretty(&index)?,
    )?;
    Ok(())
}

pub fn load_series(dir: &Path) -> Result<ClassifierSeries> {
    let index_path = dir.join("series.json");
    let text = fs::read_to_string(&index_path)
        .with_context(|| format!("reading series index {}", index_path.display()))?;
    let index: SeriesIndex = serde_json::from_str(&text)
        .with_context(|| format!("parsing series index {}", index_path.display()))?;
    let mut levels = Vec::with_capacity(index.models.len());
    for (level, files) in index.models.iter().enumerate() {
        let mut classifiers = Vec::with_capacity(files.len());
        for name in files {
            let path = dir.join(name);
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading model {}", path.display()))?;
            classifiers.push(EnsembleClassifier::from_json(&text)?);
        }
        levels.push(LevelSeries {
            classifiers,
            reports: index.reports.get(level).cloned().unwrap_or_default(),
        });
    }
    Ok(ClassifierSeries {
        snapshot: index.snapshot,
        levels,
    })
}

/// Resolves a manifest-relative path.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
