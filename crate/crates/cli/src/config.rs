//! Optional JSON configuration with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use s2h::losses::LossConfig;
use s2h::pipeline::RegistrationConfig;
use s2h::synth::PairSpec;

use crate::UsageError;

/// Everything a config file may set; missing sections keep their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub pair: Option<PairSpec>,
    pub registration: Option<RegistrationConfig>,
    pub losses: Option<LossConfig>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
}

#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArg {
    /// JSON config file; flags take precedence over its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

/// Flags overriding the registration pipeline.
#[derive(Args, Clone, Debug, Default)]
pub struct RegistrationArgs {
    /// Outer registration iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// S-step temperature for iterations without a stage override.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// S-step inlier offset for iterations without a stage override.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Maximum S-step normalization passes.
    #[arg(long)]
    pub sinkhorn_iters: Option<usize>,
    /// S-step convergence tolerance.
    #[arg(long)]
    pub sinkhorn_tol: Option<f64>,
    /// Neighborhood radius of the point features.
    #[arg(long)]
    pub feature_radius: Option<f64>,
    /// Drop the per-iteration stages and use the plain feature similarity.
    #[arg(long)]
    pub no_stages: bool,
}

impl RegistrationArgs {
    pub fn apply(&self, base: Option<RegistrationConfig>) -> Result<RegistrationConfig> {
        let mut cfg = base.unwrap_or_default();
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.temperature {
            cfg.sinkhorn.temperature = v;
        }
        if let Some(v) = self.alpha {
            cfg.sinkhorn.alpha = v;
        }
        if let Some(v) = self.sinkhorn_iters {
            cfg.sinkhorn.max_iterations = v;
        }
        if let Some(v) = self.sinkhorn_tol {
            cfg.sinkhorn.tolerance = v;
        }
        if let Some(v) = self.feature_radius {
            cfg.features.radius = v;
        }
        if self.no_stages {
            cfg.stages.clear();
        }
        cfg.validate().map_err(|e| UsageError(format!("invalid registration settings: {e}")))?;
        Ok(cfg)
    }
}

/// Flags overriding the synthetic pair protocol.
#[derive(Args, Clone, Debug, Default)]
pub struct PairArgs {
    /// Points in each base shape.
    #[arg(long)]
    pub base_size: Option<usize>,
    /// Points kept in each cloud of a pair.
    #[arg(long)]
    pub sample_size: Option<usize>,
    /// Upper bound of each Euler angle, in degrees.
    #[arg(long)]
    pub rotation_max: Option<f64>,
    /// Bound of each translation component.
    #[arg(long)]
    pub translation_max: Option<f64>,
    /// Standard deviation of the per-coordinate Gaussian noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Noise clipping bound.
    #[arg(long)]
    pub noise_clip: Option<f64>,
    /// random, partial_view or asymmetric.
    #[arg(long)]
    pub mode: Option<String>,
}

impl PairArgs {
    pub fn apply(&self, base: Option<PairSpec>) -> Result<PairSpec> {
        let mut spec = base.unwrap_or_default();
        if let Some(v) = self.base_size {
            spec.base_size = v;
        }
        if let Some(v) = self.sample_size {
            spec.sample_size = v;
        } else if spec.sample_size > spec.base_size {
            // keep the default 768-of-1024 proportion for smaller bases
            spec.sample_size = (spec.base_size * 3).div_ceil(4);
        }
        if let Some(v) = self.rotation_max {
            spec.rotation_max_deg = v;
        }
        if let Some(v) = self.translation_max {
            spec.translation_max = v;
        }
        if let Some(v) = self.noise {
            spec.noise_std = v;
        }
        if let Some(v) = self.noise_clip {
            spec.noise_clip = v;
        }
        if let Some(m) = &self.mode {
            spec.mode = m.parse().map_err(|e| UsageError(format!("{e}")))?;
        }
        spec.validate(spec.base_size).map_err(|e| UsageError(e.to_string()))?;
        Ok(spec)
    }
}

pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| UsageError(format!("invalid {what} `{s}`")).into()))
        .collect()
}
