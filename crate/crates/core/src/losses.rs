//! Matching, inlier-count and motion losses, the straight-through gradient
//! from the hard matching to the soft one, and reverse-mode differentiation
//! through the unrolled S-step.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::assignment::{project_to_ppm, HStepConfig, PartialPermutationMatrix};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidMotion};
use crate::matrix::DenseMatrix;
use crate::procrustes::{correspondences_from_ppm, weighted_procrustes};
use crate::synth::LabeledPair;
use crate::sinkhorn::{
    augmented_kernel, augmented_sinkhorn_traced, fingerprint, normalize_cols, normalize_rows, SinkhornConfig,
    SinkhornTrace,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_match: f64,
    pub lambda_inlier: f64,
    pub lambda_motion: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_match: 1.0,
            lambda_inlier: 1.0,
            lambda_motion: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_match", self.lambda_match),
            ("lambda_inlier", self.lambda_inlier),
            ("lambda_motion", self.lambda_motion),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub match_loss: f64,
    pub inlier_loss: f64,
    /// Absent when no motion could be estimated.
    pub motion_loss: Option<f64>,
    pub total: f64,
    pub inliers: usize,
    pub gt_inliers: usize,
    pub recovered: usize,
}

/// `L1 = -<M_pred, M_gt> / sum(M_gt)`.
pub fn loss_match(pred: &PartialPermutationMatrix, gt: &PartialPermutationMatrix) -> Result<f64> {
    check_ppm_shapes(pred, gt)?;
    let total = gt.inlier_count();
    if total == 0 {
        return Err(Error::InvalidInput("ground-truth matching has no inliers".into()));
    }
    Ok(-(recovered_pairs(pred, gt) as f64) / total as f64)
}

/// `L2 = -sum(M_pred) / (N + M)`.
pub fn loss_inlier_count(pred: &PartialPermutationMatrix) -> f64 {
    -(pred.inlier_count() as f64) / (pred.rows() + pred.cols()) as f64
}

/// `L3 = |R_gt^T R_pred - I|_F + |t_gt - t_pred|`.
pub fn loss_motion(pred: &RigidMotion, gt: &RigidMotion) -> f64 {
    let rot = gt.rotation().transpose() * pred.rotation() - nalgebra::Matrix3::identity();
    rot.norm() + (gt.translation() - pred.translation()).norm()
}

/// Backward pass through the hard projection: the gradient w.r.t. the hard
/// matching is used unchanged as the gradient w.r.t. the soft one.
pub fn straight_through_grad(grad_m: &DenseMatrix) -> DenseMatrix {
    grad_m.clone()
}

/// `dL1/dM`: `-m_gt / sum(m_gt)`.
pub fn match_loss_grad(gt: &PartialPermutationMatrix) -> Result<DenseMatrix> {
    let total = gt.inlier_count();
    if total == 0 {
        return Err(Error::InvalidInput("ground-truth matching has no inliers".into()));
    }
    let mut g = DenseMatrix::zeros(gt.rows(), gt.cols());
    for (i, j) in gt.pairs() {
        g[(i, j)] = -1.0 / total as f64;
    }
    Ok(g)
}

/// `dL2/dM`: `-1 / (N + M)` everywhere.
pub fn inlier_loss_grad(rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::filled(rows, cols, -1.0 / (rows + cols) as f64)
}

/// `lambda1 dL1/dM + lambda2 dL2/dM`.
pub fn combined_grad(gt: &PartialPermutationMatrix, cfg: &LossConfig) -> Result<DenseMatrix> {
    let mut g = match_loss_grad(gt)?.map(|v| cfg.lambda_match * v);
    g.add_scaled(&inlier_loss_grad(gt.rows(), gt.cols()), cfg.lambda_inlier)?;
    Ok(g)
}

pub fn evaluate(
    pred: &PartialPermutationMatrix,
    gt: &PartialPermutationMatrix,
    motions: Option<(&RigidMotion, &RigidMotion)>,
    cfg: &LossConfig,
) -> Result<LossReport> {
    let match_loss = loss_match(pred, gt)?;
    let inlier_loss = loss_inlier_count(pred);
    let motion_loss = motions.map(|(p, g)| loss_motion(p, g));
    let total = cfg.lambda_match * match_loss + cfg.lambda_inlier * inlier_loss + cfg.lambda_motion * motion_loss.unwrap_or(0.0);
    Ok(LossReport {
        match_loss,
        inlier_loss,
        motion_loss,
        total,
        inliers: pred.inlier_count(),
        gt_inliers: gt.inlier_count(),
        recovered: recovered_pairs(pred, gt),
    })
}

fn recovered_pairs(pred: &PartialPermutationMatrix, gt: &PartialPermutationMatrix) -> usize {
    gt.pairs().into_iter().filter(|&(i, j)| pred.contains(i, j)).count()
}

fn check_ppm_shapes(a: &PartialPermutationMatrix, b: &PartialPermutationMatrix) -> Result<()> {
    if (a.rows(), a.cols()) != (b.rows(), b.cols()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", b.rows(), b.cols()),
            actual: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    Ok(())
}

/// Gradient of a scalar loss w.r.t. the similarity matrix, given its
/// gradient `grad_p` w.r.t. the cropped S-step output. `trace` must come
/// from [`augmented_sinkhorn_traced`] on the same `s` and `cfg`.
pub fn sinkhorn_backward(
    s: &DenseMatrix,
    cfg: &SinkhornConfig,
    trace: &SinkhornTrace,
    grad_p: &DenseMatrix,
) -> Result<DenseMatrix> {
    if trace.config != *cfg {
        return Err(Error::TraceMismatch("configuration differs".into()));
    }
    if trace.shape != s.shape() || trace.fingerprint != fingerprint(s) {
        return Err(Error::TraceMismatch("similarity matrix differs".into()));
    }
    let (n, m) = s.shape();
    if grad_p.shape() != (n, m) {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{m}"),
            actual: format!("{}x{}", grad_p.rows(), grad_p.cols()),
        });
    }

    // Replay, keeping every intermediate and every normalizer.
    let (kernel, argmax) = augmented_kernel(s, cfg)?;
    if argmax != trace.argmax {
        return Err(Error::TraceMismatch("argmax differs".into()));
    }
    let mut a = kernel.clone();
    let mut after_rows = Vec::with_capacity(trace.iterations);
    let mut after_cols = Vec::with_capacity(trace.iterations);
    let mut row_sums = Vec::with_capacity(trace.iterations);
    let mut col_sums = Vec::with_capacity(trace.iterations);
    for _ in 0..trace.iterations {
        row_sums.push(normalize_rows(&mut a, n));
        after_rows.push(a.clone());
        col_sums.push(normalize_cols(&mut a, m));
        after_cols.push(a.clone());
    }

    let mut g = DenseMatrix::zeros(n + 1, m + 1);
    for i in 0..n {
        for j in 0..m {
            g[(i, j)] = grad_p[(i, j)];
        }
    }
    for it in (0..trace.iterations).rev() {
        // C = B / c_j on real columns
        let c = &after_cols[it];
        for j in 0..m {
            let dot: f64 = (0..=n).map(|i| g[(i, j)] * c[(i, j)]).sum();
            for i in 0..=n {
                g[(i, j)] = (g[(i, j)] - dot) / col_sums[it][j];
            }
        }
        // B = A / r_i on real rows
        let b = &after_rows[it];
        for i in 0..n {
            let dot: f64 = (0..=m).map(|j| g[(i, j)] * b[(i, j)]).sum();
            for j in 0..=m {
                g[(i, j)] = (g[(i, j)] - dot) / row_sums[it][i];
            }
        }
    }

    // Kernel entries are exp(z - c_i); the per-row shifts c_i cancel in the
    // first row normalization, so only z carries gradient.
    let mut grad_s = DenseMatrix::zeros(n, m);
    let mut through_max = 0.0;
    for i in 0..n {
        for j in 0..m {
            let gz = g[(i, j)] * kernel[(i, j)];
            grad_s[(i, j)] = gz / cfg.temperature;
            through_max += gz;
        }
    }
    if n > 0 && m > 0 {
        grad_s[argmax] -= through_max / cfg.temperature;
    }
    Ok(grad_s)
}

/// Gradient descent on a free similarity matrix, supervised by a known
/// matching.
#[derive(Clone, Debug)]
pub struct DescentSetup {
    pub initial: DenseMatrix,
    pub gt: PartialPermutationMatrix,
    pub sinkhorn: SinkhornConfig,
    pub hstep: HStepConfig,
    pub losses: LossConfig,
    /// Source, target and ground-truth motion, used only to report `L3`.
    pub clouds: Option<(PointCloud, PointCloud, RigidMotion)>,
}

impl DescentSetup {
    /// All-zero similarity with default S-step and H-step settings.
    pub fn zero_start(pair: &LabeledPair, losses: LossConfig) -> Self {
        Self {
            initial: DenseMatrix::zeros(pair.source.len(), pair.target.len()),
            gt: pair.gt.clone(),
            sinkhorn: SinkhornConfig::default(),
            hstep: HStepConfig::default(),
            losses,
            clouds: Some((pair.source.clone(), pair.target.clone(), pair.motion)),
        }
    }
}

/// Runs `steps` updates `S <- S - lr * dL/dS` with `L = l1 L1 + l2 L2` and
/// returns the loss report before each update and after the last one
/// (`steps + 1` entries).
pub fn descent_demo(setup: &DescentSetup, steps: usize, learning_rate: f64) -> Result<Vec<LossReport>> {
    setup.losses.validate()?;
    if setup.initial.shape() != (setup.gt.rows(), setup.gt.cols()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", setup.gt.rows(), setup.gt.cols()),
            actual: format!("{}x{}", setup.initial.rows(), setup.initial.cols()),
        });
    }
    let upstream = straight_through_grad(&combined_grad(&setup.gt, &setup.losses)?);
    let mut s = setup.initial.clone();
    let mut trajectory = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        if !s.all_finite() {
            return Err(Error::Diverged { step, trajectory });
        }
        let (p, trace) = augmented_sinkhorn_traced(&s, &setup.sinkhorn)?;
        let m = project_to_ppm(&p, &setup.hstep)?;
        let motion = setup.clouds.as_ref().and_then(|(x, y, gt)| {
            let (corr, w) = correspondences_from_ppm(&m, y).ok()?;
            Some((weighted_procrustes(x, &corr, &w).ok()?, *gt))
        });
        let report = evaluate(&m, &setup.gt, motion.as_ref().map(|(p, g)| (p, g)), &setup.losses)?;
        if !report.total.is_finite() {
            return Err(Error::Diverged { step, trajectory });
        }
        trajectory.push(report);
        if step == steps {
            break;
        }
        let grad = sinkhorn_backward(&s, &setup.sinkhorn, &trace, &upstream)?;
        s.add_scaled(&grad, -learning_rate)?;
    }
    Ok(trajectory)
}

/// `step,l1,l2,l3,total,inliers,recovered`, numbering rows from
/// `first_step`; an unavailable `L3` is left empty.
pub fn write_trajectory_csv<W: Write>(trajectory: &[LossReport], first_step: usize, mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,l1,l2,l3,total,inliers,recovered")?;
    for (k, r) in trajectory.iter().enumerate() {
        let l3 = r.motion_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{l3},{},{},{}",
            first_step + k,
            r.match_loss,
            r.inlier_loss,
            r.total,
            r.inliers,
            r.recovered
        )?;
    }
    Ok(())
}
