//! Command-line driver for hierarchical merge-tree segmentation.
//!
//! Commands: `superpixel` (watershed + pre-merge to a label map), `train`
//! (iterative classifier series from a manifest), `segment` (accumulated
//! contour hierarchies), `eval` (region metrics at ODS/OIS), and `noise`
//! (noisy copies of a manifest's images). Exit codes: 0 success, 1 input
//! error, 2 internal invariant violation.
//!
//! Manifests are tab-separated lines `split<TAB>image<TAB>pb<TAB>gt1;gt2`
//! with `-` for a missing boundary map; paths resolve relative to the
//! manifest file. Merge trees can be dumped for debugging in the text format
//! `node_id depth parent_id left_id right_id size`, one node per line with
//! leaves first and -1 for absent links.

mod config;
mod io;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::{Config, ConfigArgs};
use treeseg_core::error::Error as CoreError;
use treeseg_core::metrics::evaluate_ods_ois;
use treeseg_core::pipeline::{
    add_gaussian_noise, contour_to_segmentation, fallback_boundary_map, segment_iterative,
    train_iterative, DatasetItem, DatasetManifest, ManifestEntry,
};
use treeseg_core::segmentation::Segmentation;
use treeseg_core::superpixel::{pre_merge_small, watershed};

#[derive(Parser)]
#[command(name = "treeseg", version, about = "Hierarchical merge-tree image segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Watershed superpixels with small-region pre-merging; writes a 16-bit
    /// label map.
    Superpixel {
        #[arg(long)]
        image: PathBuf,
        /// Boundary map (16-bit grayscale); omitted: smoothed-gradient fallback.
        #[arg(long)]
        pb: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the iterative classifier series on the manifest's train split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for model files, series index, and report.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Segment the manifest's test split into contour hierarchies.
    Segment {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding series.json and its model files.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Manifest split to segment.
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write label maps thresholded at these comma-separated values.
        #[arg(long, value_delimiter = ',')]
        dump_labels_at: Vec<f64>,
    },
    /// Evaluate contour hierarchies against the manifest's ground truths.
    Eval {
        #[arg(long)]
        contours: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Write noisy copies of the manifest's images plus a rewritten manifest.
    Noise {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        variance: Option<f64>,
        #[arg(long)]
        noise_out_seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let config = match cli.config.load() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            // Core invariant violations are distinguished from bad input.
            let internal = e
                .chain()
                .filter_map(|cause| cause.downcast_ref::<CoreError>())
                .any(|core| !core.is_input());
            ExitCode::from(if internal { 2 } else { 1 })
        }
    }
}

fn run(command: Command, config: &Config) -> Result<()> {
    match command {
        Command::Superpixel { image, pb, out } => cmd_superpixel(&image, pb.as_deref(), &out, config),
        Command::Train { manifest, out_dir } => cmd_train(&manifest, &out_dir, config),
        Command::Segment {
            manifest,
            models,
            out_dir,
            split,
            dump_labels_at,
        } => cmd_segment(&manifest, &models, &out_dir, &split, &dump_labels_at, config),
        Command::Eval {
            contours,
            manifest,
            out_dir,
            split,
        } => cmd_eval(&contours, &manifest, &out_dir, &split, config),
        Command::Noise {
            manifest,
            variance,
            noise_out_seed,
            out_dir,
        } => cmd_noise(&manifest, variance, noise_out_seed, &out_dir, config),
    }
}

fn cmd_superpixel(image: &Path, pb: Option<&Path>, out: &Path, config: &Config) -> Result<()> {
    let img = io::load_image(image)?;
    let pb = match pb {
        Some(path) => io::load_contour(path)?,
        None => fallback_boundary_map(&img),
    };
    let seg = watershed(&pb, config.pipeline.water_level)?;
    let seg = pre_merge_small(&seg, &pb, config.pipeline.pre_merge_min_size)?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    io::save_labels(out, &seg)?;
    println!(
        "{}: {} superpixels -> {}",
        image.display(),
        seg.region_count(),
        out.display()
    );
    Ok(())
}

fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let manifest = DatasetManifest::parse(&text)?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((manifest, base))
}

fn item_name(entry: &ManifestEntry) -> String {
    entry
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| entry.image.display().to_string())
}

fn load_item(entry: &ManifestEntry, base: &Path, with_gts: bool) -> Result<DatasetItem> {
    let image = io::load_image(&io::resolve(base, &entry.image))?;
    let pb = match &entry.pb {
        Some(p) => io::load_contour(&io::resolve(base, p))?,
        None => fallback_boundary_map(&image),
    };
    let mut gts = Vec::new();
    if with_gts {
        for gt in &entry.gts {
            gts.push(io::load_labels(&io::resolve(base, gt))?);
        }
    }
    let item = DatasetItem {
        name: item_name(entry),
        image,
        pb,
        gts,
    };
    item.pb
        .same_size(item.image.width(), item.image.height())
        .with_context(|| format!("item {}: boundary map size", item.name))?;
    for gt in &item.gts {
        if gt.width() != item.image.width() || gt.height() != item.image.height() {
            bail!(
                "item {}: ground truth {}x{} does not match image {}x{}",
                item.name,
                gt.width(),
                gt.height(),
                item.image.width(),
                item.image.height()
            );
        }
    }
    Ok(item)
}

fn cmd_train(manifest: &Path, out_dir: &Path, config: &Config) -> Result<()> {
    let (manifest, base) = load_manifest(manifest)?;
    let train_entries = manifest.split("train");
    if train_entries.is_empty() {
        bail!("manifest has no train-split entries");
    }
    let items: Vec<DatasetItem> = train_entries
        .iter()
        .map(|e| load_item(e, &base, true))
        .collect::<Result<_>>()?;
    let validation: Vec<DatasetItem> = if config.pipeline.validation_stop {
        manifest
            .split("val")
            .iter()
            .map(|e| load_item(e, &base, true))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let series = train_iterative(&items, &validation, &config.pipeline)?;
    io::save_series(out_dir, &series)?;

    let mut report = String::new();
    report.push_str(&config.render());
    report.push('\n');
    for (level, ls) in series.levels.iter().enumerate() {
        for r in &ls.reports {
            report.push_str(&format!(
                "level {} iteration {}: samples {} (+{} new), routing {:?}{}\n",
                level,
                r.iteration,
                r.samples_total,
                r.samples_new,
                r.routing_counts,
                if r.fallback.iter().any(|&f| f) {
                    format!(", fallback {:?}", r.fallback)
                } else {
                    String::new()
                }
            ));
        }
    }
    fs::write(out_dir.join("report.txt"), &report)?;
    println!(
        "trained {} level series ({} classifiers each) -> {}",
        series.levels.len(),
        series.levels.first().map(|l| l.classifiers.len()).unwrap_or(0),
        out_dir.display()
    );
    Ok(())
}

fn cmd_segment(
    manifest: &Path,
    models: &Path,
    out_dir: &Path,
    split: &str,
    dump_labels_at: &[f64],
    config: &Config,
) -> Result<()> {
    let (manifest, base) = load_manifest(manifest)?;
    let entries = manifest.split(split);
    if entries.is_empty() {
        bail!("manifest has no {split}-split entries");
    }
    let series = io::load_series(models)?;
    let mut items: Vec<DatasetItem> = entries
        .iter()
        .map(|e| load_item(e, &base, false))
        .collect::<Result<_>>()?;
    if config.noise_variance > 0.0 {
        for (i, item) in items.iter_mut().enumerate() {
            item.image = add_gaussian_noise(
                &item.image,
                config.noise_variance,
                config.noise_seed.wrapping_add(i as u64),
            )?;
            item.pb = match &entries[i].pb {
                Some(p) => io::load_contour(&io::resolve(&base, p))?,
                None => fallback_boundary_map(&item.image),
            };
        }
    }

    let maps = segment_iterative(&items, &series, &config.pipeline)?;
    fs::create_dir_all(out_dir)?;
    for (item, map) in items.iter().zip(&maps) {
        io::save_contour(&out_dir.join(format!("{}.png", item.name)), map)?;
        for &threshold in dump_labels_at {
            let seg = contour_to_segmentation(map, threshold)?;
            io::save_labels(
                &out_dir.join(format!("{}_t{:.2}.png", item.name, threshold)),
                &seg,
            )?;
        }
    }
    println!("segmented {} images -> {}", items.len(), out_dir.display());
    Ok(())
}

fn cmd_eval(
    contours: &Path,
    manifest: &Path,
    out_dir: &Path,
    split: &str,
    config: &Config,
) -> Result<()> {
    let (manifest, base) = load_manifest(manifest)?;
    let mut entries = manifest.split(split);
    if entries.is_empty() {
        bail!("manifest has no {split}-split entries");
    }
    // Canonical name order keeps the report independent of manifest order.
    entries.sort_by_key(|e| item_name(e));

    let mut names = Vec::new();
    let mut maps = Vec::new();
    let mut gts: Vec<Vec<Segmentation>> = Vec::new();
    for entry in entries {
        let name = item_name(entry);
        let contour_path = contours.join(format!("{name}.png"));
        if !contour_path.exists() {
            bail!("missing contour map {}", contour_path.display());
        }
        maps.push(io::load_contour(&contour_path)?);
        let mut entry_gts = Vec::new();
        for gt in &entry.gts {
            entry_gts.push(io::load_labels(&io::resolve(&base, gt))?);
        }
        gts.push(entry_gts);
        names.push(name);
    }

    let report = evaluate_ods_ois(&maps, &gts, &config.thresholds())?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("eval_raw.tsv"), report.to_tsv(&names))?;
    let summary = report.summary_line();
    fs::write(out_dir.join("summary.txt"), format!("{summary}\n"))?;
    println!("{summary}");
    Ok(())
}

fn cmd_noise(
    manifest_path: &Path,
    variance: Option<f64>,
    seed: Option<u64>,
    out_dir: &Path,
    config: &Config,
) -> Result<()> {
    let (manifest, base) = load_manifest(manifest_path)?;
    if manifest.entries.is_empty() {
        bail!("manifest is empty");
    }
    let variance = variance.unwrap_or(config.noise_variance);
    let seed = seed.unwrap_or(config.noise_seed);
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir)?;

    // Names can repeat across directories; disambiguate deterministically.
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    let mut rewritten = Vec::new();
    for (i, entry) in manifest.entries.iter().enumerate() {
        let image = io::load_image(&io::resolve(&base, &entry.image))?;
        let noisy = add_gaussian_noise(&image, variance, seed.wrapping_add(i as u64))?;
        let mut name = item_name(entry);
        let slot = used.entry(name.clone()).or_insert(0);
        if *slot > 0 {
            name = format!("{name}_{slot}");
        }
        *slot += 1;
        let out_image = image_dir.join(format!("{name}.png"));
        io::save_image(&out_image, &noisy)?;
        rewritten.push(ManifestEntry {
            split: entry.split.clone(),
            image: PathBuf::from("images").join(format!("{name}.png")),
            pb: entry.pb.as_ref().map(|p| io::resolve(&base, p)),
            gts: entry.gts.iter().map(|p| io::resolve(&base, p)).collect(),
        });
    }
    let out_manifest = DatasetManifest { entries: rewritten };
    fs::write(out_dir.join("manifest.tsv"), out_manifest.render())?;
    println!(
        "wrote {} noisy images (variance {variance}) -> {}",
        manifest.entries.len(),
        out_dir.display()
    );
    Ok(())
}
