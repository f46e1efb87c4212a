//! Iterative registration: features, similarity, S-step, H-step and
//! weighted Procrustes, with the estimated motion fed back into the next
//! round.

use serde::{Deserialize, Serialize};

use crate::assignment::{project_matrix, HStepConfig, ProfitScale, PartialPermutationMatrix, MAX_POINTS};
use crate::error::{Error, Result};
use crate::features::{descriptor_with, similarity_with, ChannelWeights, FeatureConfig, FeatureSet};
use crate::geometry::{apply_motion, compose, PointCloud, RigidMotion};
use crate::matrix::DenseMatrix;
use crate::par::Execution;
use crate::procrustes::{correspondences_from_ppm, weighted_procrustes, weighted_residual, MIN_INLIERS};
use crate::sinkhorn::{augmented_sinkhorn, SinkhornConfig};

pub const MIN_POINTS: usize = 4;

/// Per-iteration similarity recipe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStage {
    pub weights: ChannelWeights,
    /// Multiplier of the squared distance between the moved source point
    /// and the target point, subtracted from the feature similarity.
    pub geometric_weight: f64,
    /// Overrides the S-step temperature for this iteration.
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Overrides the S-step inlier offset for this iteration.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Overrides the H-step profit scale for this iteration.
    #[serde(default)]
    pub profit_scale: Option<ProfitScale>,
    /// Overrides the feature neighborhood radius for this iteration.
    #[serde(default)]
    pub radius: Option<f64>,
}

impl IterationStage {
    /// Only the rotation- and translation-invariant channels.
    pub fn invariant() -> Self {
        Self {
            weights: ChannelWeights {
                position: 0.0,
                offset: 0.0,
                angle: 1.0,
                distance: 1.0,
            },
            geometric_weight: 0.0,
            temperature: None,
            alpha: None,
            profit_scale: None,
            radius: None,
        }
    }

    pub fn features(weights: ChannelWeights) -> Self {
        Self {
            weights,
            geometric_weight: 0.0,
            temperature: None,
            alpha: None,
            profit_scale: None,
            radius: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub iterations: usize,
    pub sinkhorn: SinkhornConfig,
    pub features: FeatureConfig,
    pub hstep: HStepConfig,
    pub min_inliers: usize,
    /// Stage `k` drives iteration `k`; the last stage repeats. Empty means
    /// `features.weights` with no geometric term throughout.
    pub stages: Vec<IterationStage>,
    /// Per-iteration S-step temperatures (last repeats); `None` keeps
    /// `sinkhorn.temperature`.
    pub temperature_schedule: Option<Vec<f64>>,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            sinkhorn: SinkhornConfig::default(),
            features: FeatureConfig::default(),
            hstep: HStepConfig::default(),
            min_inliers: MIN_INLIERS,
            stages: default_stages(),
            temperature_schedule: None,
        }
    }
}

/// Coarse alignment from the pose-invariant channels with a sharp S-step,
/// then geometric refinement whose distance weight grows each iteration so
/// that the matching radius `sqrt(alpha / weight)` shrinks from about 0.2
/// to below 1e-3.
pub fn default_stages() -> Vec<IterationStage> {
    let refine = |geometric_weight: f64| IterationStage {
        geometric_weight,
        profit_scale: Some(ProfitScale::Relative(8.0)),
        ..IterationStage::invariant()
    };
    vec![
        IterationStage {
            temperature: Some(3e-4),
            alpha: Some(0.01),
            radius: Some(0.2),
            ..refine(0.0)
        },
        IterationStage {
            temperature: Some(5e-3),
            ..refine(10.0)
        },
        refine(300.0),
        refine(1e4),
        refine(1e6),
    ]
}

impl RegistrationConfig {
    /// Two iterations, as used when the pipeline is trained end to end.
    pub fn training() -> Self {
        Self {
            iterations: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidInput("registration needs at least one iteration".into()));
        }
        if self.min_inliers < MIN_INLIERS {
            return Err(Error::InvalidInput(format!("minimum inliers must be >= {MIN_INLIERS}")));
        }
        self.sinkhorn.validate()?;
        for stage in &self.stages {
            if !(stage.geometric_weight.is_finite() && stage.geometric_weight >= 0.0) {
                return Err(Error::InvalidInput("geometric weight must be finite and >= 0".into()));
            }
        }
        if let Some(ts) = &self.temperature_schedule {
            if ts.is_empty() || ts.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(Error::InvalidInput("temperature schedule must hold positive values".into()));
            }
        }
        Ok(())
    }

    pub fn stage(&self, k: usize) -> IterationStage {
        match self.stages.len() {
            0 => IterationStage::features(self.features.weights),
            n => self.stages[k.min(n - 1)],
        }
    }

    pub fn hstep_for(&self, k: usize) -> HStepConfig {
        match self.stage(k).profit_scale {
            Some(profit_scale) => HStepConfig { profit_scale },
            None => self.hstep,
        }
    }

    pub fn sinkhorn_for(&self, k: usize) -> SinkhornConfig {
        let mut cfg = self.sinkhorn;
        let stage = self.stage(k);
        if let Some(t) = stage.temperature {
            cfg.temperature = t;
        }
        if let Some(a) = stage.alpha {
            cfg.alpha = a;
        }
        if let Some(ts) = &self.temperature_schedule {
            cfg.temperature = ts[k.min(ts.len() - 1)];
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Composed motion after this iteration.
    pub motion: RigidMotion,
    pub inliers: usize,
    pub sinkhorn_iterations: usize,
    pub sinkhorn_residual: f64,
    /// Weighted correspondence residual of the incremental fit.
    pub residual: f64,
    pub fill_min: f64,
    pub fill_mean: f64,
    pub fill_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Maps the original source onto the target frame.
    pub motion: RigidMotion,
    /// Matching from the last successful iteration.
    pub ppm: PartialPermutationMatrix,
    pub iterations: Vec<IterationRecord>,
    /// Set when a later iteration failed and the result stops early.
    pub degraded: bool,
    pub failure: Option<String>,
}

fn check_size(cloud: &PointCloud) -> Result<()> {
    if !(MIN_POINTS..=MAX_POINTS).contains(&cloud.len()) {
        return Err(Error::CloudSize {
            size: cloud.len(),
            min: MIN_POINTS,
            max: MAX_POINTS,
        });
    }
    Ok(())
}

pub fn register(source: &PointCloud, target: &PointCloud, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    register_with(source, target, cfg, Execution::default())
}

pub fn register_with(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &RegistrationConfig,
    exec: Execution,
) -> Result<RegistrationResult> {
    check_size(source)?;
    check_size(target)?;
    cfg.validate()?;

    let mut target_features: Vec<(ChannelWeights, f64, FeatureSet)> = Vec::new();
    let mut total = RigidMotion::identity();
    let mut moved = source.clone();
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut last_ppm = None;

    for k in 0..cfg.iterations {
        let stage = cfg.stage(k);
        let step = (|| -> Result<(RigidMotion, PartialPermutationMatrix, IterationRecord)> {
            let fcfg = FeatureConfig {
                weights: stage.weights,
                radius: stage.radius.unwrap_or(cfg.features.radius),
                ..cfg.features.clone()
            };
            let tf = match target_features.iter().find(|(w, r, _)| *w == stage.weights && *r == fcfg.radius) {
                Some((_, _, f)) => f.clone(),
                None => {
                    let f = descriptor_with(target, &fcfg, exec)?;
                    target_features.push((stage.weights, fcfg.radius, f.clone()));
                    f
                }
            };
            let sf = descriptor_with(&moved, &fcfg, exec)?;
            let mut s = similarity_with(&sf, &tf, exec)?;
            if stage.geometric_weight > 0.0 {
                add_geometric_term(&mut s, &moved, target, stage.geometric_weight, exec);
            }
            let p = augmented_sinkhorn(&s, &cfg.sinkhorn_for(k))?;
            let (ppm, aug) = project_matrix(p.matrix(), &cfg.hstep_for(k))?;
            if ppm.inlier_count() < cfg.min_inliers {
                return Err(Error::DegenerateCorrespondences {
                    inliers: ppm.inlier_count(),
                    required: cfg.min_inliers,
                });
            }
            let (corr, weights) = correspondences_from_ppm(&ppm, target)?;
            let incr = weighted_procrustes(&moved, &corr, &weights)?;
            let fills: Vec<f64> = aug.row_fill.iter().chain(&aug.col_fill).copied().collect();
            let record = IterationRecord {
                motion: incr,
                inliers: ppm.inlier_count(),
                sinkhorn_iterations: p.iterations,
                sinkhorn_residual: p.residual,
                residual: weighted_residual(&moved, &corr, &weights, &incr),
                fill_min: fills.iter().copied().fold(f64::INFINITY, f64::min),
                fill_mean: fills.iter().sum::<f64>() / fills.len() as f64,
                fill_max: fills.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            Ok((incr, ppm, record))
        })();

        match step {
            Ok((incr, ppm, mut record)) => {
                total = compose(&incr, &total);
                moved = apply_motion(source, &total);
                record.motion = total;
                records.push(record);
                last_ppm = Some(ppm);
            }
            Err(e) => match last_ppm {
                None => return Err(e),
                Some(ppm) => {
                    return Ok(RegistrationResult {
                        motion: total,
                        ppm,
                        iterations: records,
                        degraded: true,
                        failure: Some(e.to_string()),
                    })
                }
            },
        }
    }

    Ok(RegistrationResult {
        motion: total,
        ppm: last_ppm.expect("at least one iteration ran"),
        iterations: records,
        degraded: false,
        failure: None,
    })
}

fn add_geometric_term(s: &mut DenseMatrix, moved: &PointCloud, target: &PointCloud, weight: f64, exec: Execution) {
    let m = target.len();
    exec.for_each_row(s.as_mut_slice(), m, |i, row| {
        let x = moved.point(i);
        for (v, y) in row.iter_mut().zip(target.points()) {
            *v -= weight * (x - y).norm_squared();
        }
    });
}

/// Registers every pair; failures are kept per pair.
pub fn register_batch(
    pairs: &[(PointCloud, PointCloud)],
    cfg: &RegistrationConfig,
    exec: Execution,
) -> Vec<Result<RegistrationResult>> {
    // parallel across pairs only; each registration runs sequentially
    exec.map_slice(pairs, |(x, y)| register_with(x, y, cfg, Execution::Sequential))
}
