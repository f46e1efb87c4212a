//! Evaluation: Euler-angle and translation errors, RE/TE with success
//! thresholds, correspondence discrepancies, and adaptive-threshold
//! matching recall.

use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::assignment::PartialPermutationMatrix;
use crate::error::{Error, Result};
use crate::geometry::{apply_motion, rotation_angle_deg, rotation_to_euler, PointCloud, RigidMotion};
use crate::spatial::KdTree;

/// Componentwise absolute residuals of one pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionResiduals {
    /// |yaw|, |pitch|, |roll| differences in degrees, wrapped into [0, 180].
    pub euler_deg: [f64; 3],
    pub translation: [f64; 3],
}

fn wrap_deg(d: f64) -> f64 {
    let d = d.abs() % 360.0;
    d.min(360.0 - d)
}

pub fn motion_errors(pred: &RigidMotion, gt: &RigidMotion) -> MotionResiduals {
    let (a, b) = (rotation_to_euler(pred.rotation()).as_array(), rotation_to_euler(gt.rotation()).as_array());
    let dt = pred.translation() - gt.translation();
    MotionResiduals {
        euler_deg: [wrap_deg(a[0] - b[0]), wrap_deg(a[1] - b[1]), wrap_deg(a[2] - b[2])],
        translation: [dt.x.abs(), dt.y.abs(), dt.z.abs()],
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub rmse: f64,
    pub mae: f64,
}

impl ErrorStats {
    /// Over absolute residuals; an empty input gives zeros.
    pub fn from_residuals(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            sum += v.abs();
            sq += v * v;
        }
        if n == 0 {
            return Self::default();
        }
        Self {
            rmse: (sq / n as f64).sqrt(),
            mae: sum / n as f64,
        }
    }
}

/// Every Euler (translation) component of every pair is one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionErrorSummary {
    pub rotation_deg: ErrorStats,
    pub translation: ErrorStats,
}

pub fn summarize_motion_errors(residuals: &[MotionResiduals]) -> MotionErrorSummary {
    MotionErrorSummary {
        rotation_deg: ErrorStats::from_residuals(residuals.iter().flat_map(|r| r.euler_deg)),
        translation: ErrorStats::from_residuals(residuals.iter().flat_map(|r| r.translation)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessThresholds {
    pub rotation_deg: f64,
    pub translation: f64,
}

impl SuccessThresholds {
    pub const INDOOR: Self = Self {
        rotation_deg: 15.0,
        translation: 0.3,
    };
    pub const OUTDOOR: Self = Self {
        rotation_deg: 5.0,
        translation: 0.6,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReTe {
    pub re_deg: f64,
    /// Euclidean norm of the translation difference.
    pub te: f64,
    pub te_squared: f64,
}

impl ReTe {
    pub fn success(&self, t: &SuccessThresholds) -> bool {
        self.re_deg < t.rotation_deg && self.te < t.translation
    }
}

/// `RE = acos((tr(R_pred^T R_gt) - 1) / 2)` in degrees, `TE = |t_pred - t_gt|`.
pub fn re_te(pred: &RigidMotion, gt: &RigidMotion) -> ReTe {
    let re_deg = rotation_angle_deg(pred.rotation(), gt.rotation());
    let dt = pred.translation() - gt.translation();
    ReTe {
        re_deg,
        te: dt.norm(),
        te_squared: dt.norm_squared(),
    }
}

fn require_gt(gt: &PartialPermutationMatrix) -> Result<()> {
    if gt.inlier_count() == 0 {
        return Err(Error::InvalidInput("ground truth has no corresponding pairs".into()));
    }
    Ok(())
}

/// Predicted corresponding point of each source row under `m` (`Y M^T`).
pub fn predicted_correspondences(m: &PartialPermutationMatrix, target: &PointCloud) -> Result<Vec<Vector3<f64>>> {
    if m.cols() != target.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} target points", m.cols()),
            actual: target.len().to_string(),
        });
    }
    Ok((0..m.rows()).map(|i| m.target_of(i).map_or_else(Vector3::zeros, |j| *target.point(j))).collect())
}

fn discrepancy(pred: &[Vector3<f64>], target: &PointCloud, gt: &PartialPermutationMatrix) -> Result<ErrorStats> {
    require_gt(gt)?;
    if pred.len() != gt.rows() || target.len() != gt.cols() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} ground truth", pred.len(), target.len()),
            actual: format!("{}x{}", gt.rows(), gt.cols()),
        });
    }
    Ok(ErrorStats::from_residuals(gt.pairs().into_iter().map(|(i, j)| (pred[i] - target.point(j)).norm())))
}

/// Discrepancy of `Y M_pred^T` against the true corresponding points, over
/// ground-truth inliers.
pub fn correspondence_discrepancy_matrix(
    m_pred: &PartialPermutationMatrix,
    target: &PointCloud,
    gt: &PartialPermutationMatrix,
) -> Result<ErrorStats> {
    discrepancy(&predicted_correspondences(m_pred, target)?, target, gt)
}

/// Discrepancy of `NN_Y(R_pred X + t_pred)` against the true corresponding
/// points, over ground-truth inliers.
pub fn correspondence_discrepancy_transform(
    motion: &RigidMotion,
    source: &PointCloud,
    target: &PointCloud,
    gt: &PartialPermutationMatrix,
) -> Result<ErrorStats> {
    let moved = apply_motion(source, motion);
    let tree = KdTree::new(target);
    let pred = moved
        .points()
        .iter()
        .map(|p| tree.nearest(p).map(|(j, _)| *target.point(j)))
        .collect::<Result<Vec<_>>>()?;
    discrepancy(&pred, target, gt)
}

/// `(K, recall %)` for each requested `K`. The threshold of gt pair `(i, j)`
/// is the mean distance from `y_j` to its `K` nearest other target points
/// (`0` for `K = 0`); the prediction counts when within that threshold.
pub fn recall_curve(
    predicted: &[Vector3<f64>],
    gt: &PartialPermutationMatrix,
    target: &PointCloud,
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    require_gt(gt)?;
    if predicted.len() != gt.rows() || target.len() != gt.cols() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} ground truth", predicted.len(), target.len()),
            actual: format!("{}x{}", gt.rows(), gt.cols()),
        });
    }
    let k_max = ks.iter().copied().max().unwrap_or(0);
    let tree = KdTree::new(target);
    let pairs = gt.pairs();
    // prefix sums of neighbor distances per gt pair
    let mut prefix: Vec<Vec<f64>> = Vec::with_capacity(pairs.len());
    for &(_, j) in &pairs {
        let neighbors = if k_max == 0 {
            Vec::new()
        } else {
            tree.knn(target.point(j), k_max, true)?
        };
        let mut acc = vec![0.0];
        for (_, d) in neighbors {
            acc.push(acc.last().unwrap() + d);
        }
        prefix.push(acc);
    }
    let total = pairs.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let correct = pairs
                .iter()
                .zip(&prefix)
                .filter(|((i, j), acc)| {
                    let tau = if k == 0 { 0.0 } else { acc[k] / k as f64 };
                    (predicted[*i] - target.point(*j)).norm() <= tau
                })
                .count();
            (k, 100.0 * correct as f64 / total)
        })
        .collect())
}

pub fn matching_recall(
    predicted: &[Vector3<f64>],
    gt: &PartialPermutationMatrix,
    target: &PointCloud,
    k: usize,
) -> Result<f64> {
    Ok(recall_curve(predicted, gt, target, &[k])?[0].1)
}

/// Every metric for one registered pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub residuals: MotionResiduals,
    pub re_te: ReTe,
    pub success_indoor: bool,
    pub success_outdoor: bool,
    pub discrepancy_matrix: ErrorStats,
    pub discrepancy_transform: ErrorStats,
    pub recall: Vec<(usize, f64)>,
}

pub struct PairEvaluation<'a> {
    pub source: &'a PointCloud,
    pub target: &'a PointCloud,
    pub gt_motion: &'a RigidMotion,
    pub gt: &'a PartialPermutationMatrix,
    pub pred_motion: &'a RigidMotion,
    pub pred: &'a PartialPermutationMatrix,
}

pub fn evaluate_pair(e: &PairEvaluation<'_>, ks: &[usize]) -> Result<MetricReport> {
    let rt = re_te(e.pred_motion, e.gt_motion);
    let predicted = predicted_correspondences(e.pred, e.target)?;
    Ok(MetricReport {
        residuals: motion_errors(e.pred_motion, e.gt_motion),
        re_te: rt,
        success_indoor: rt.success(&SuccessThresholds::INDOOR),
        success_outdoor: rt.success(&SuccessThresholds::OUTDOOR),
        discrepancy_matrix: discrepancy(&predicted, e.target, e.gt)?,
        discrepancy_transform: correspondence_discrepancy_transform(e.pred_motion, e.source, e.target, e.gt)?,
        recall: recall_curve(&predicted, e.gt, e.target, ks)?,
    })
}

/// Batch aggregate; pair-level stats are averaged, motion errors pooled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub pairs: usize,
    pub motion: MotionErrorSummary,
    pub re_mean_deg: f64,
    pub te_mean: f64,
    pub te_squared_mean: f64,
    pub success_indoor_pct: f64,
    pub success_outdoor_pct: f64,
    pub discrepancy_matrix: ErrorStats,
    pub discrepancy_transform: ErrorStats,
    pub recall: Vec<(usize, f64)>,
}

pub fn summarize(reports: &[MetricReport]) -> BatchSummary {
    let n = reports.len();
    if n == 0 {
        return BatchSummary::default();
    }
    let mean = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n as f64;
    let pct = |f: &dyn Fn(&MetricReport) -> bool| 100.0 * reports.iter().filter(|r| f(r)).count() as f64 / n as f64;
    // root of the mean squared per-pair RMSE keeps RMSE >= MAE
    let pooled = |f: &dyn Fn(&MetricReport) -> ErrorStats| ErrorStats {
        rmse: (reports.iter().map(|r| f(r).rmse.powi(2)).sum::<f64>() / n as f64).sqrt(),
        mae: reports.iter().map(|r| f(r).mae).sum::<f64>() / n as f64,
    };
    let residuals: Vec<MotionResiduals> = reports.iter().map(|r| r.residuals).collect();
    let recall = reports[0]
        .recall
        .iter()
        .enumerate()
        .map(|(idx, (k, _))| (*k, reports.iter().map(|r| r.recall[idx].1).sum::<f64>() / n as f64))
        .collect();
    BatchSummary {
        pairs: n,
        motion: summarize_motion_errors(&residuals),
        re_mean_deg: mean(&|r| r.re_te.re_deg),
        te_mean: mean(&|r| r.re_te.te),
        te_squared_mean: mean(&|r| r.re_te.te_squared),
        success_indoor_pct: pct(&|r| r.success_indoor),
        success_outdoor_pct: pct(&|r| r.success_outdoor),
        discrepancy_matrix: pooled(&|r| r.discrepancy_matrix),
        discrepancy_transform: pooled(&|r| r.discrepancy_transform),
        recall,
    }
}

pub const SUMMARY_CSV_HEADER: &str = "label,pairs,rmse_r_deg,mae_r_deg,rmse_t,mae_t,rmse_dis_matrix,mae_dis_matrix,rmse_dis_transform,mae_dis_transform,re_mean_deg,te_mean,te_squared_mean,success_indoor_pct,success_outdoor_pct";

pub fn write_summary_row<W: Write>(mut out: W, label: &str, s: &BatchSummary) -> std::io::Result<()> {
    writeln!(
        out,
        "{label},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        s.pairs,
        s.motion.rotation_deg.rmse,
        s.motion.rotation_deg.mae,
        s.motion.translation.rmse,
        s.motion.translation.mae,
        s.discrepancy_matrix.rmse,
        s.discrepancy_matrix.mae,
        s.discrepancy_transform.rmse,
        s.discrepancy_transform.mae,
        s.re_mean_deg,
        s.te_mean,
        s.te_squared_mean,
        s.success_indoor_pct,
        s.success_outdoor_pct
    )
}

pub fn write_recall_csv<W: Write>(mut out: W, label: &str, curve: &[(usize, f64)]) -> std::io::Result<()> {
    for (k, r) in curve {
        writeln!(out, "{label},{k},{r}")?;
    }
    Ok(())
}
