//! Constructive demonstration that many soft matching matrices yield the same
//! Procrustes rotation while their virtual corresponding points degenerate.
//!
//! With centered `3 x N` coordinate matrices `X`, `Y` and the ground-truth
//! permutation `M*`, `H* = X (Y M*^T)^T = U* D* V*^T` and `R* = V* U*^T`.
//! Every `P = X^+ (U* D V*^T) (Y^T)^+` with positive descending `D` satisfies
//! `X P Y^T = U* D V*^T`, so Procrustes on `(X, Y P^T)` returns `R*` again.

use std::io::Write;

use nalgebra::{DMatrix, Matrix3, Matrix3xX, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_angle_deg, PointCloud, RigidMotion};
use crate::linalg::{proper_rotation, svd3};
use crate::par::Execution;
use crate::procrustes::{weighted_procrustes, MatchWeights};

pub const RANK_TOLERANCE: f64 = 1e-6;
pub const DIAGONAL_GAP: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct AmbiguityInstance {
    /// Centered source coordinates.
    pub x: Matrix3xX<f64>,
    /// Centered, permuted target coordinates.
    pub y: Matrix3xX<f64>,
    /// `y[perm[i]] = R* x[i]`.
    pub perm: Vec<usize>,
    pub h: Matrix3<f64>,
    pub u: Matrix3<f64>,
    pub d: Vector3<f64>,
    pub v: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    /// `X^T (X X^T)^-1`, `N x 3`.
    pub x_pinv: DMatrix<f64>,
    /// `(Y Y^T)^-1 Y`, `3 x N`.
    pub yt_pinv: DMatrix<f64>,
    xxt_inv: Matrix3<f64>,
}

fn coordinates(points: &[Vector3<f64>]) -> Matrix3xX<f64> {
    let mut m = Matrix3xX::from_columns(points);
    let mean = m.column_mean();
    for mut c in m.column_iter_mut() {
        c -= &mean;
    }
    m
}

fn smallest_singular_value(m: &Matrix3xX<f64>) -> f64 {
    svd3(&(m * m.transpose())).singular_values[2].max(0.0).sqrt()
}

fn invert(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    m.try_inverse().ok_or(Error::RankDeficient(0.0))
}

/// Moves `cloud` by `motion`, shuffles the result with `seed`, centers both
/// clouds, and factors the cross-covariance.
pub fn build_instance(cloud: &PointCloud, motion: &RigidMotion, seed: u64) -> Result<AmbiguityInstance> {
    let n = cloud.len();
    if n < 4 {
        return Err(Error::CloudSize { size: n, min: 4, max: usize::MAX });
    }
    let x = coordinates(cloud.points());
    let sigma = smallest_singular_value(&x);
    if !(sigma > RANK_TOLERANCE) {
        return Err(Error::RankDeficient(sigma));
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut target = vec![Vector3::zeros(); n];
    for (i, p) in cloud.points().iter().enumerate() {
        target[perm[i]] = motion.apply(p);
    }
    let y = coordinates(&target);
    let sigma = smallest_singular_value(&y);
    if !(sigma > RANK_TOLERANCE) {
        return Err(Error::RankDeficient(sigma));
    }

    // Y M*^T lists the true partner of each source point in source order
    let matched = Matrix3xX::from_fn(n, |r, i| y[(r, perm[i])]);
    let h = &x * matched.transpose();
    let svd = svd3(&h);
    // Y = R X gives H = X X^T R^T, so R = V U^T
    let rotation = proper_rotation(&svd).transpose();

    let xxt_inv = invert(&(&x * x.transpose()))?;
    let yyt_inv = invert(&(&y * y.transpose()))?;
    let x_dyn = DMatrix::from_column_slice(3, n, x.as_slice());
    let y_dyn = DMatrix::from_column_slice(3, n, y.as_slice());
    let xxt_dyn = DMatrix::from_column_slice(3, 3, xxt_inv.as_slice());
    let yyt_dyn = DMatrix::from_column_slice(3, 3, yyt_inv.as_slice());
    Ok(AmbiguityInstance {
        x_pinv: x_dyn.transpose() * xxt_dyn,
        yt_pinv: yyt_dyn * y_dyn,
        x,
        y,
        perm,
        h,
        u: svd.u,
        d: svd.singular_values,
        v: svd.v,
        rotation,
        xxt_inv,
    })
}

impl AmbiguityInstance {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest distance of a centered source point from the origin.
    pub fn radius(&self) -> f64 {
        self.x.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `R* X`, the true corresponding points in source order.
    pub fn true_correspondences(&self) -> Matrix3xX<f64> {
        self.rotation * &self.x
    }

    /// `U* D V*^T`.
    pub fn target_covariance(&self, d: &Vector3<f64>) -> Matrix3<f64> {
        self.u * Matrix3::from_diagonal(d) * self.v.transpose()
    }

    pub fn source_cloud(&self) -> PointCloud {
        PointCloud::new(self.x.column_iter().map(|c| c.into_owned()).collect()).expect("finite coordinates")
    }
}

pub fn validate_diagonal(d: &Vector3<f64>) -> Result<()> {
    if !d.iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(Error::InvalidDiagonal(format!("entries must be positive, got {:?}", d.as_slice())));
    }
    for k in 0..2 {
        if (d[k] - d[k + 1]) <= DIAGONAL_GAP * d[k] {
            return Err(Error::InvalidDiagonal(format!(
                "entries must be strictly descending, got {:?}",
                d.as_slice()
            )));
        }
    }
    Ok(())
}

/// `P = X^+ (U* D V*^T) (Y^T)^+`, an `N x N` matrix.
pub fn soft_matrix_family(inst: &AmbiguityInstance, d: &Vector3<f64>) -> Result<DMatrix<f64>> {
    validate_diagonal(d)?;
    let core = inst.target_covariance(d);
    let core = DMatrix::from_column_slice(3, 3, core.as_slice());
    Ok(&inst.x_pinv * core * &inst.yt_pinv)
}

/// `Y P^T` computed without forming `P`: `V* D U*^T (X X^T)^-1 X`.
pub fn virtual_points(inst: &AmbiguityInstance, d: &Vector3<f64>) -> Result<Matrix3xX<f64>> {
    validate_diagonal(d)?;
    Ok(inst.target_covariance(d).transpose() * inst.xxt_inv * &inst.x)
}

/// `Y P^T` from an explicit `P`.
pub fn virtual_points_of(inst: &AmbiguityInstance, p: &DMatrix<f64>) -> Matrix3xX<f64> {
    let y = DMatrix::from_column_slice(3, inst.len(), inst.y.as_slice());
    let v = y * p.transpose();
    Matrix3xX::from_column_slice(v.as_slice())
}

fn to_cloud(m: &Matrix3xX<f64>) -> Result<PointCloud> {
    PointCloud::new(m.column_iter().map(|c| c.into_owned()).collect())
}

/// Procrustes rotation from `(X, virtual)` with unit weights.
pub fn procrustes_rotation(inst: &AmbiguityInstance, virtual_points: &Matrix3xX<f64>) -> Result<Matrix3<f64>> {
    let motion = weighted_procrustes(&inst.source_cloud(), &to_cloud(virtual_points)?, &MatchWeights::ones(inst.len()))?;
    Ok(*motion.rotation())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegenerationRow {
    pub d: [f64; 3],
    pub rotation_error_deg: f64,
    pub virtual_rmse: f64,
    pub virtual_rmse_over_radius: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub p_mean: f64,
    pub p_negative_fraction: f64,
}

pub fn degeneration_row(inst: &AmbiguityInstance, d: &Vector3<f64>) -> Result<DegenerationRow> {
    let p = soft_matrix_family(inst, d)?;
    let virt = virtual_points(inst, d)?;
    let rotation = procrustes_rotation(inst, &virt)?;
    let truth = inst.true_correspondences();
    let rmse = ((&virt - &truth).norm_squared() / inst.len() as f64).sqrt();
    let count = p.len() as f64;
    Ok(DegenerationRow {
        d: [d[0], d[1], d[2]],
        rotation_error_deg: rotation_angle_deg(&rotation, &inst.rotation),
        virtual_rmse: rmse,
        virtual_rmse_over_radius: rmse / inst.radius(),
        p_min: p.min(),
        p_max: p.max(),
        p_mean: p.sum() / count,
        p_negative_fraction: p.iter().filter(|v| **v < 0.0).count() as f64 / count,
    })
}

pub fn degeneration_report(inst: &AmbiguityInstance, ds: &[Vector3<f64>], exec: Execution) -> Result<Vec<DegenerationRow>> {
    exec.map_slice(ds, |d| degeneration_row(inst, d)).into_iter().collect()
}

/// `D* (1 + s)` for `s = step, 2 step, ..., count step`.
pub fn scaling_ray(d_star: &Vector3<f64>, step: f64, count: usize) -> Vec<Vector3<f64>> {
    (1..=count).map(|k| d_star * (1.0 + step * k as f64)).collect()
}

/// `D*`, `10 D*`, each component halved where order allows, and `D*` scaled
/// by `scales`.
pub fn standard_diagonals(d_star: &Vector3<f64>, scales: &[f64]) -> Vec<Vector3<f64>> {
    let mut out = vec![*d_star, d_star * 10.0];
    for k in 0..3 {
        let mut d = *d_star;
        d[k] *= 0.5;
        if validate_diagonal(&d).is_ok() {
            out.push(d);
        }
    }
    out.extend(scales.iter().map(|s| d_star * *s));
    out
}

pub const DEGENERATION_CSV_HEADER: &str =
    "d1,d2,d3,rotation_error_deg,virtual_rmse,virtual_rmse_over_radius,p_min,p_max,p_mean,p_negative_fraction";

pub fn write_degeneration_csv<W: Write>(mut out: W, rows: &[DegenerationRow]) -> std::io::Result<()> {
    writeln!(out, "{DEGENERATION_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.d[0],
            r.d[1],
            r.d[2],
            r.rotation_error_deg,
            r.virtual_rmse,
            r.virtual_rmse_over_radius,
            r.p_min,
            r.p_max,
            r.p_mean,
            r.p_negative_fraction
        )?;
    }
    Ok(())
}

pub fn virtual_cloud(inst: &AmbiguityInstance, d: &Vector3<f64>) -> Result<PointCloud> {
    to_cloud(&virtual_points(inst, d)?)
}
