//! Run configuration: one TOML file, fully validated before any work starts.

use std::path::{Path, PathBuf};

use gridloc_core::decoding::DecodeOptions;
use gridloc_core::geometry::GridSpec;
use gridloc_core::nms::PipelineConfig;
use gridloc_core::sampler::{CountDistribution, SampleBudget};
use gridloc_core::simulator::{derive_seed, NoiseModel, SceneParams};
use serde::{Deserialize, Serialize};

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

/// Failure to obtain a usable configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Heatmap noise; its seed is derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub peak_sigma: f64,
    pub jitter_sigma: f64,
    pub background: f64,
    pub false_peak_prob: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let m = NoiseModel::moderate(0);
        NoiseConfig {
            peak_sigma: m.peak_sigma,
            jitter_sigma: m.jitter_sigma,
            background: m.background,
            false_peak_prob: m.false_peak_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub trials: usize,
    pub budget: SampleBudget,
    pub distribution: CountDistribution,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            trials: 10_000,
            budget: SampleBudget::default(),
            distribution: CountDistribution::heavy_tailed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Not serialized: where results go does not affect them.
    #[serde(default = "default_out_dir", skip_serializing)]
    pub out_dir: PathBuf,
    /// Grid variants compared by `simulate`.
    #[serde(default = "default_grids")]
    pub grid: Vec<GridSpec>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub decode: DecodeOptions,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default = "original_pipeline")]
    pub original_pipeline: PipelineConfig,
    #[serde(default)]
    pub scenes: SceneParams,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("gridloc-out")
}

fn default_grids() -> Vec<GridSpec> {
    vec![GridSpec::quarter(28), GridSpec::whole(56), GridSpec::whole(28)]
}

fn original_pipeline() -> PipelineConfig {
    PipelineConfig::ORIGINAL
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(format!("{origin}: {e}")))?;
        cfg.validate().map_err(|e| ConfigError(format!("{origin}: {}", e.0)))?;
        Ok(cfg)
    }

    /// Reads `path`, or the bundled default when `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => RunConfig::parse(DEFAULT_CONFIG, "bundled default config"),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read config {}: {e}", p.display())))?;
                RunConfig::parse(&text, &p.display().to_string())
            }
        }
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel {
            peak_sigma: self.noise.peak_sigma,
            jitter_sigma: self.noise.jitter_sigma,
            background: self.noise.background,
            false_peak_prob: self.noise.false_peak_prob,
            seed: derive_seed(&[self.seed, 1]),
        }
    }

    pub fn scene_seed(&self) -> u64 {
        derive_seed(&[self.seed, 2])
    }

    pub fn sampler_seed(&self) -> u64 {
        derive_seed(&[self.seed, 3])
    }

    /// Checks every section; the message names the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.grid.is_empty() {
            return Err(ConfigError(
                "invalid `grid`: at least one grid variant is required".into(),
            ));
        }
        for (i, g) in self.grid.iter().enumerate() {
            g.validate().map_err(|e| at(&format!("grid[{i}]"), e))?;
        }
        self.noise_model().validate().map_err(|e| at("noise", e))?;
        self.decode.validate().map_err(|e| at("decode", e))?;
        self.pipeline.validate().map_err(|e| at("pipeline", e))?;
        self.original_pipeline
            .validate()
            .map_err(|e| at("original_pipeline", e))?;
        self.scenes.validate().map_err(|e| at("scenes", e))?;
        self.sampler.budget.validate().map_err(|e| at("sampler.budget", e))?;
        self.sampler
            .distribution
            .validate()
            .map_err(|e| at("sampler.distribution", e))?;
        if self.sampler.trials == 0 {
            return Err(ConfigError("invalid `sampler.trials`: must be >= 1".into()));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(ConfigError("invalid `out_dir`: empty path".into()));
        }
        Ok(())
    }
}

fn at(key: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("invalid `{key}`: {e}"))
}
