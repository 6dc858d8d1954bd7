//! Flat key-value configuration files plus command-line overrides.
//!
//! Every published default is a named key, so a config file fixes the whole
//! run. Unknown keys are rejected. The `TREESEG_CONFIG` environment variable
//! names a default config file used when `--config` is absent.

use anyhow::{bail, Context, Result};
use clap::Args;

use treeseg_core::classifier::LabelMetric;
use treeseg_core::pipeline::PipelineConfig;

/// Full CLI configuration: the pipeline settings plus evaluation and noise
/// knobs that only the commands use.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub pipeline: PipelineConfig,
    /// Number of evenly spaced thresholds in (0, 1) for evaluation.
    pub threshold_steps: usize,
    pub noise_variance: f64,
    pub noise_seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            pipeline: PipelineConfig::default(),
            threshold_steps: 99,
            noise_variance: 0.0,
            noise_seed: 0,
        }
    }
}

impl Config {
    pub fn thresholds(&self) -> Vec<f64> {
        let n = self.threshold_steps;
        (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Config> {
        let mut config = Config::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected key = value", ln + 1);
            };
            let key = key.trim();
            let value = value.trim();
            let parse_err = || format!("config line {}: bad value for {key}", ln + 1);
            match key {
                "water_level" => {
                    config.pipeline.water_level = value.parse().with_context(parse_err)?
                }
                "pre_merge_min_size" => {
                    config.pipeline.pre_merge_min_size = value.parse().with_context(parse_err)?
                }
                "iterations" => {
                    config.pipeline.iterations = value.parse().with_context(parse_err)?
                }
                "forest_trees" => {
                    config.pipeline.forest.tree_count = value.parse().with_context(parse_err)?
                }
                "forest_sample_fraction" => {
                    config.pipeline.forest.sample_fraction =
                        value.parse().with_context(parse_err)?
                }
                "forest_features_per_split" => {
                    config.pipeline.forest.features_per_split = if value == "auto" {
                        None
                    } else {
                        Some(value.parse().with_context(parse_err)?)
                    }
                }
                "label_metric" => {
                    config.pipeline.label_metric = match value {
                        "vi" => LabelMetric::Vi,
                        "ri" => LabelMetric::RandIndex,
                        _ => bail!("config line {}: label_metric must be vi or ri", ln + 1),
                    }
                }
                "seed" => config.pipeline.seed = value.parse().with_context(parse_err)?,
                "validation_stop" => {
                    config.pipeline.validation_stop = value.parse().with_context(parse_err)?
                }
                "threshold_grid_steps" => {
                    config.threshold_steps = value.parse().with_context(parse_err)?
                }
                "noise_variance" => {
                    config.noise_variance = value.parse().with_context(parse_err)?
                }
                "noise_seed" => config.noise_seed = value.parse().with_context(parse_err)?,
                _ => bail!("config line {}: unknown key {key}", ln + 1),
            }
        }
        Ok(config)
    }

    pub fn render(&self) -> String {
        let features = match self.pipeline.forest.features_per_split {
            None => "auto".to_string(),
            Some(m) => m.to_string(),
        };
        let metric = match self.pipeline.label_metric {
            LabelMetric::Vi => "vi",
            LabelMetric::RandIndex => "ri",
        };
        format!(
            "water_level = {}\npre_merge_min_size = {}\niterations = {}\n\
             forest_trees = {}\nforest_sample_fraction = {}\nforest_features_per_split = {}\n\
             label_metric = {}\nseed = {}\nvalidation_stop = {}\n\
             threshold_grid_steps = {}\nnoise_variance = {}\nnoise_seed = {}\n",
            self.pipeline.water_level,
            self.pipeline.pre_merge_min_size,
            self.pipeline.iterations,
            self.pipeline.forest.tree_count,
            self.pipeline.forest.sample_fraction,
            features,
            metric,
            self.pipeline.seed,
            self.pipeline.validation_stop,
            self.threshold_steps,
            self.noise_variance,
            self.noise_seed,
        )
    }
}

/// Flags shared by every command; each one overrides its config-file key.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Config file of key = value lines (default: $TREESEG_CONFIG if set).
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,

    #[arg(long, global = true)]
    pub water_level: Option<f64>,

    #[arg(long, global = true)]
    pub pre_merge_min_size: Option<usize>,

    /// Iteration count T; the trained series has T + 1 classifiers.
    #[arg(long, global = true)]
    pub iterations: Option<usize>,

    #[arg(long, global = true)]
    pub forest_trees: Option<usize>,

    #[arg(long, global = true)]
    pub forest_sample_fraction: Option<f64>,

    /// Candidate features per split, or "auto" for floor(sqrt(D)).
    #[arg(long, global = true)]
    pub forest_features_per_split: Option<String>,

    /// Label metric: vi or ri.
    #[arg(long, global = true)]
    pub label_metric: Option<String>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    pub validation_stop: Option<bool>,

    #[arg(long, global = true)]
    pub threshold_grid_steps: Option<usize>,

    /// Test-time Gaussian noise variance applied to loaded images.
    #[arg(long, global = true)]
    pub noise_variance: Option<f64>,

    #[arg(long, global = true)]
    pub noise_seed: Option<u64>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<Config> {
        let path = self.config.clone().or_else(|| {
            std::env::var_os("TREESEG_CONFIG").map(std::path::PathBuf::from)
        });
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Config::parse(&text)?
            }
            None => Config::default(),
        };
        if let Some(v) = self.water_level {
            config.pipeline.water_level = v;
        }
        if let Some(v) = self.pre_merge_min_size {
            config.pipeline.pre_merge_min_size = v;
        }
        if let Some(v) = self.iterations {
            config.pipeline.iterations = v;
        }
        if let Some(v) = self.forest_trees {
            config.pipeline.forest.tree_count = v;
        }
        if let Some(v) = self.forest_sample_fraction {
            config.pipeline.forest.sample_fraction = v;
        }
        if let Some(v) = &self.forest_features_per_split {
            config.pipeline.forest.features_per_split = if v == "auto" {
                None
            } else {
                Some(v.parse().context("--forest-features-per-split")?)
            };
        }
        if let Some(v) = &self.label_metric {
            config.pipeline.label_metric = match v.as_str() {
                "vi" => LabelMetric::Vi,
                "ri" => LabelMetric::RandIndex,
                _ => bail!("--label-metric must be vi or ri"),
            };
        }
        if let Some(v) = self.seed {
            config.pipeline.seed = v;
        }
        if let Some(v) = self.validation_stop {
            config.pipeline.validation_stop = v;
        }
        if let Some(v) = self.threshold_grid_steps {
            config.threshold_steps = v;
        }
        if let Some(v) = self.noise_variance {
            config.noise_variance = v;
        }
        if let Some(v) = self.noise_seed {
            config.noise_seed = v;
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let c = Config::default();
        assert_eq!(c.pipeline.water_level, 0.01);
        assert_eq!(c.pipeline.pre_merge_min_size, 20);
        assert_eq!(c.pipeline.iterations, 10);
        assert_eq!(c.pipeline.forest.tree_count, 255);
        assert_eq!(c.pipeline.forest.sample_fraction, 0.7);
        assert_eq!(c.pipeline.forest.features_per_split, None);
        assert_eq!(c.pipeline.label_metric, LabelMetric::Vi);
        assert_eq!(c.threshold_steps, 99);
        let grid = c.thresholds();
        assert_eq!(grid.len(), 99);
        assert!((grid[0] - 0.01).abs() < 1e-12);
        assert!((grid[98] - 0.99).abs() < 1e-12);
    }

    #[test]
    fn parse_render_round_trip() {
        let mut c = Config::default();
        c.pipeline.water_level = 0.005;
        c.pipeline.iterations = 3;
        c.pipeline.label_metric = LabelMetric::RandIndex;
        c.noise_variance = 0.01;
        let parsed = Config::parse(&c.render()).unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::parse("nonsense = 1\n").is_err());
        assert!(Config::parse("water_level 0.01\n").is_err());
    }
}
