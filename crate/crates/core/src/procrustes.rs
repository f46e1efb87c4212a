//! Weighted Procrustes over the correspondences kept by a partial
//! permutation matrix.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::assignment::PartialPermutationMatrix;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidMotion};
use crate::linalg::{proper_rotation, svd3};

pub const MIN_INLIERS: usize = 3;
const RANK_TOLERANCE: f64 = 1e-10;

/// Binary per-source weights and their normalization to unit sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    weights: Vec<f64>,
    normalized: Vec<f64>,
}

impl MatchWeights {
    pub fn from_binary(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| w != 0.0 && w != 1.0) {
            return Err(Error::InvalidInput("match weights must be 0 or 1".into()));
        }
        let total: f64 = weights.iter().sum();
        let normalized = if total > 0.0 {
            weights.iter().map(|w| w / total).collect()
        } else {
            vec![0.0; weights.len()]
        };
        Ok(Self { weights, normalized })
    }

    pub fn ones(n: usize) -> Self {
        Self::from_binary(vec![1.0; n]).expect("ones are binary")
    }

    pub fn from_ppm(m: &PartialPermutationMatrix) -> Self {
        Self::from_binary(m.row_sums()).expect("ppm row sums are binary")
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn inlier_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

/// `Y' = Y M^T`: row `i` holds the target matched to source `i`, or the
/// origin when `i` is unmatched.
pub fn correspondences_from_ppm(m: &PartialPermutationMatrix, target: &PointCloud) -> Result<(PointCloud, MatchWeights)> {
    if m.cols() != target.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} target points", m.cols()),
            actual: format!("{}", target.len()),
        });
    }
    let points = (0..m.rows())
        .map(|i| m.target_of(i).map_or_else(Vector3::zeros, |j| *target.point(j)))
        .collect();
    Ok((PointCloud::new(points)?, MatchWeights::from_ppm(m)))
}

/// Rigid motion minimizing `sum_i w_i |R x_i + t - y'_i|^2` over inliers.
///
/// `H = Y' K W K X^T` with `K = I - sqrt(w) sqrt(w)^T`; `R = U E V^T` from
/// the SVD of `H`; `t = (Y' - R X) W 1`.
pub fn weighted_procrustes(source: &PointCloud, corr: &PointCloud, weights: &MatchWeights) -> Result<RigidMotion> {
    let n = source.len();
    if corr.len() != n || weights.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} correspondences and weights"),
            actual: format!("{} correspondences, {} weights", corr.len(), weights.len()),
        });
    }
    let inliers = weights.inlier_count();
    if inliers < MIN_INLIERS {
        return Err(Error::DegenerateCorrespondences {
            inliers,
            required: MIN_INLIERS,
        });
    }
    let w = weights.normalized();
    let active: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();

    // X K has columns x_i - sqrt(w_i) * sum_j sqrt(w_j) x_j.
    let mut xs = Vector3::zeros();
    let mut ys = Vector3::zeros();
    for &i in &active {
        let s = w[i].sqrt();
        xs += s * source.point(i);
        ys += s * corr.point(i);
    }
    let mut h = Matrix3::zeros();
    for &i in &active {
        let s = w[i].sqrt();
        h += w[i] * (corr.point(i) - s * ys) * (source.point(i) - s * xs).transpose();
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("cross-covariance"));
    }

    let svd = svd3(&h);
    let d = svd.singular_values;
    if !(d[0] > 0.0) || d[1] < RANK_TOLERANCE * d[0] {
        return Err(Error::DegenerateGeometry);
    }
    let r = proper_rotation(&svd);
    let mut t = Vector3::zeros();
    for &i in &active {
        t += w[i] * (corr.point(i) - r * source.point(i));
    }
    RigidMotion::from_approximate(r, t)
}

/// `sum_i w_i |R x_i + t - y'_i|^2` with the normalized weights.
pub fn weighted_residual(source: &PointCloud, corr: &PointCloud, weights: &MatchWeights, motion: &RigidMotion) -> f64 {
    let w = weights.normalized();
    (0..source.len())
        .filter(|&i| w[i] > 0.0)
        .map(|i| w[i] * (motion.apply(source.point(i)) - corr.point(i)).norm_squared())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::apply_motion;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    fn random_motion(rng: &mut impl Rng) -> RigidMotion {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let t = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        RigidMotion::from_axis_angle(axis, rng.random_range(0.0..std::f64::consts::PI), t)
    }

    fn close(a: &RigidMotion, b: &RigidMotion, tol: f64) -> bool {
        (a.rotation() - b.rotation()).abs().max() < tol && (a.translation() - b.translation()).abs().max() < tol
    }

    /// Classical Kabsch with explicit centroids and nalgebra's SVD.
    fn kabsch(x: &PointCloud, y: &PointCloud) -> RigidMotion {
        let (cx, cy) = (x.centroid(), y.centroid());
        let mut h = Matrix3::zeros();
        for (a, b) in x.points().iter().zip(y.points()) {
            h += (b - cy) * (a - cx).transpose();
        }
        let svd = h.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let d = (u * vt).determinant().signum();
        let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt;
        RigidMotion::new(r, cy - r * cx).unwrap()
    }

    #[test]
    fn identity_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_cloud(&mut rng, 20);
        let m = weighted_procrustes(&x, &x, &MatchWeights::ones(20)).unwrap();
        assert!(close(&m, &RigidMotion::identity(), 1e-9));
    }

    #[test]
    fn recovers_planted_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = random_cloud(&mut rng, 30);
            let gt = random_motion(&mut rng);
            let y = apply_motion(&x, &gt);
            let m = weighted_procrustes(&x, &y, &MatchWeights::ones(30)).unwrap();
            assert!(close(&m, &gt, 1e-9));
        }
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = 40;
            let x = random_cloud(&mut rng, n);
            let gt = random_motion(&mut rng);
            let mut y = apply_motion(&x, &gt).into_points();
            let mut w = vec![1.0; n];
            for i in rand::seq::index::sample(&mut rng, n, 12) {
                w[i] = 0.0;
                y[i] = Vector3::new(rng.random_range(-50.0..50.0), 7.0, -3.0);
            }
            let weights = MatchWeights::from_binary(w.clone()).unwrap();
            let y = PointCloud::new(y).unwrap();
            let m = weighted_procrustes(&x, &y, &weights).unwrap();
            assert!(close(&m, &gt, 1e-9));

            // arbitrary perturbation of zero-weight rows changes nothing
            let mut x2 = x.clone().into_points();
            let mut y2 = y.clone().into_points();
            for i in (0..n).filter(|&i| w[i] == 0.0) {
                x2[i] *= 100.0;
                y2[i] = Vector3::new(-1.0, 1e3, 2.0);
            }
            let m2 = weighted_procrustes(&PointCloud::new(x2).unwrap(), &PointCloud::new(y2).unwrap(), &weights).unwrap();
            assert_eq!(m, m2);
        }
    }

    #[test]
    fn matches_independent_kabsch_on_noisy_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_cloud(&mut rng, 25);
            let gt = random_motion(&mut rng);
            let y: Vec<_> = apply_motion(&x, &gt)
                .into_points()
                .into_iter()
                .map(|p| p + Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
                .collect();
            let y = PointCloud::new(y).unwrap();
            let ours = weighted_procrustes(&x, &y, &MatchWeights::ones(25)).unwrap();
            assert!(close(&ours, &kabsch(&x, &y), 1e-9));
        }
    }

    #[test]
    fn beats_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let x = random_cloud(&mut rng, 8);
            let gt = random_motion(&mut rng);
            let y: Vec<_> = apply_motion(&x, &gt)
                .into_points()
                .into_iter()
                .map(|p| p + Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.0))
                .collect();
            let y = PointCloud::new(y).unwrap();
            let w = MatchWeights::from_binary(vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0]).unwrap();
            let best = weighted_procrustes(&x, &y, &w).unwrap();
            let best_err = weighted_residual(&x, &y, &w, &best);
            for _ in 0..10_000 {
                let r = Rotation3::from_scaled_axis(Vector3::new(
                    rng.random_range(-3.2..3.2),
                    rng.random_range(-3.2..3.2),
                    rng.random_range(-3.2..3.2),
                ))
                .into_inner();
                // optimal translation for this rotation
                let mut t = Vector3::zeros();
                for i in 0..8 {
                    t += w.normalized()[i] * (y.point(i) - r * x.point(i));
                }
                let cand = RigidMotion::new(r, t).unwrap();
                assert!(best_err <= weighted_residual(&x, &y, &w, &cand) + 1e-12);
            }
        }
    }

    #[test]
    fn reflection_case_stays_proper() {
        // planar source, target mirrored through the plane normal
        let x = PointCloud::from_arrays(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.5, 0.2, 0.0]]).unwrap();
        let y = PointCloud::from_arrays(&[[0.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 1.0, 0.0], [-0.5, 0.2, 0.01]]).unwrap();
        let m = weighted_procrustes(&x, &y, &MatchWeights::ones(5)).unwrap();
        assert!((m.rotation().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let x = PointCloud::from_arrays(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            weighted_procrustes(&x, &x, &MatchWeights::from_binary(vec![1.0, 1.0, 0.0, 0.0]).unwrap()),
            Err(Error::DegenerateCorrespondences { inliers: 2, required: 3 })
        ));
        assert!(matches!(weighted_procrustes(&x, &x, &MatchWeights::ones(4)), Err(Error::DegenerateGeometry)));
        assert!(matches!(
            weighted_procrustes(&x, &x, &MatchWeights::from_binary(vec![0.0; 4]).unwrap()),
            Err(Error::DegenerateCorrespondences { inliers: 0, .. })
        ));
        assert!(MatchWeights::from_binary(vec![0.5]).is_err());
    }

    #[test]
    fn correspondences_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_cloud(&mut rng, 7);
        let (c, w) = correspondences_from_ppm(&PartialPermutationMatrix::identity(7), &y).unwrap();
        assert_eq!(c, y);
        assert_eq!(w.weights(), &[1.0; 7]);

        let (c, w) = correspondences_from_ppm(&PartialPermutationMatrix::empty(4, 7), &y).unwrap();
        assert!(c.points().iter().all(|p| *p == Vector3::zeros()));
        assert_eq!(w.inlier_count(), 0);

        // Y M^T by explicit matrix product
        let m = PartialPermutationMatrix::from_pairs(5, 7, [(0, 6), (2, 1), (3, 3), (4, 0)]).unwrap();
        let dense = m.to_dense();
        let (c, w) = correspondences_from_ppm(&m, &y).unwrap();
        for i in 0..5 {
            let mut expected = Vector3::zeros();
            for j in 0..7 {
                expected += dense[(i, j)] * y.point(j);
            }
            assert_eq!(*c.point(i), expected);
            assert_eq!(w.weights()[i], dense.row_sums()[i]);
        }
    }

    proptest! {
        #[test]
        fn output_is_a_rotation(seed in any::<u64>(), n in 3usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_cloud(&mut rng, n);
            let y = random_cloud(&mut rng, n);
            if let Ok(m) = weighted_procrustes(&x, &y, &MatchWeights::ones(n)) {
                let r = m.rotation();
                prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
                prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            }
        }
    }
}
