//! Hand-crafted point features and the similarity matrix built from them.
//!
//! Each point pairs with up to `samples` neighbors inside `radius`. A pair
//! contributes a 10D raw feature: the point's coordinates, the offset to the
//! neighbor, and the 4D point pair feature (three normal/offset angles plus
//! the offset length). The raw features are summarized by their elementwise
//! mean and standard deviation and the 20D result is L2-normalized.

use std::io::Write;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::matrix::DenseMatrix;
use crate::par::Execution;
use crate::spatial::KdTree;

pub const RAW_DIM: usize = 10;
pub const DESCRIPTOR_DIM: usize = 2 * RAW_DIM;

/// Dense `N_source x N_target` profit matrix.
pub type SimilarityMatrix = DenseMatrix;

/// Per-group multipliers applied to the raw 10D feature before aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelWeights {
    /// Absolute coordinates of the center point.
    pub position: f64,
    /// Offset from the center to the neighbor.
    pub offset: f64,
    /// The three PPF angles.
    pub angle: f64,
    /// The PPF offset length.
    pub distance: f64,
}

impl Default for ChannelWeights {
    fn default() -> Self {
        Self {
            position: 1.0,
            offset: 1.0,
            angle: 1.0,
            distance: 1.0,
        }
    }
}

impl ChannelWeights {
    fn as_array(&self) -> [f64; RAW_DIM] {
        let (p, o, a, d) = (self.position, self.offset, self.angle, self.distance);
        [p, p, p, o, o, o, a, a, a, d]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    pub weights: ChannelWeights,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            radius: 0.3,
            samples: 64,
            seed: 0,
            weights: ChannelWeights::default(),
        }
    }
}

impl FeatureConfig {
    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidInput(format!("feature radius must be positive, got {}", self.radius)));
        }
        if self.samples == 0 {
            return Err(Error::InvalidInput("feature sample count must be at least 1".into()));
        }
        let w = self.weights.as_array();
        if !w.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidInput("channel weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Unit-length per-point descriptors, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    descriptors: Vec<f64>,
    pub radius: f64,
    pub samples: usize,
}

impl FeatureSet {
    /// Wraps precomputed descriptors, normalizing each to unit length.
    pub fn from_descriptors(dim: usize, mut descriptors: Vec<f64>) -> Result<Self> {
        if dim == 0 || !descriptors.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch {
                expected: format!("a multiple of {dim}"),
                actual: descriptors.len().to_string(),
            });
        }
        if !descriptors.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("descriptors"));
        }
        for row in descriptors.chunks_mut(dim) {
            normalize(row);
        }
        Ok(Self {
            dim,
            descriptors,
            radius: f64::NAN,
            samples: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.descriptors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim).map(|k| format!("f{k}")).collect();
        writeln!(out, "point,{}", header.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = self.descriptor(i).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{i},{}", row.join(","))?;
        }
        Ok(())
    }
}

fn normalize(row: &mut [f64]) {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    } else {
        // all-zero aggregate: fall back to a fixed unit vector
        row[0] = 1.0;
    }
}

/// Unit "normal" per point: the direction from its radius-neighborhood
/// centroid to the point. Falls back to the direction away from the single
/// nearest neighbor, then away from the cloud centroid, then +z.
pub fn estimate_normals(cloud: &PointCloud, radius: f64) -> Vec<Vector3<f64>> {
    estimate_normals_with(cloud, &KdTree::new(cloud), radius, Execution::default())
}

fn estimate_normals_with(cloud: &PointCloud, tree: &KdTree<'_>, radius: f64, exec: Execution) -> Vec<Vector3<f64>> {
    let cloud_centroid = cloud.centroid();
    exec.map_range(cloud.len(), |i| {
        let p = cloud.point(i);
        let neighbors = tree.within_radius(p, radius);
        let centroid = neighbors.iter().map(|&j| cloud.point(j)).sum::<Vector3<f64>>() / neighbors.len() as f64;
        let mut dir = p - centroid;
        if dir.norm() <= 1e-12 {
            if let Ok(near) = tree.knn(p, 1, true) {
                dir = p - cloud.point(near[0].0);
            }
        }
        if dir.norm() <= 1e-12 {
            dir = p - cloud_centroid;
        }
        if dir.norm() <= 1e-12 {
            return Vector3::z();
        }
        dir.normalize()
    })
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // atan2 form is accurate near 0 and pi
    a.cross(b).norm().atan2(a.dot(b))
}

/// `[x_i, x_j - x_i, PPF(i, j)]` with
/// `PPF = (angle(n_i, d), angle(n_j, d), angle(n_i, n_j), |d|)`, `d = x_j - x_i`.
/// For coincident points the two offset angles are 0.
pub fn raw_feature_10d(cloud: &PointCloud, normals: &[Vector3<f64>], i: usize, j: usize) -> [f64; RAW_DIM] {
    let xi = cloud.point(i);
    let d = cloud.point(j) - xi;
    let (ni, nj) = (&normals[i], &normals[j]);
    let len = d.norm();
    let (a1, a2) = if len == 0.0 {
        (0.0, 0.0)
    } else {
        (angle_between(ni, &d), angle_between(nj, &d))
    };
    [xi.x, xi.y, xi.z, d.x, d.y, d.z, a1, a2, angle_between(ni, nj), len]
}

fn point_rng(seed: u64, index: usize) -> ChaCha8Rng {
    // splitmix-style mixing keeps per-point streams independent of
    // evaluation order
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Neighbor indices used for point `i`: up to `samples` points within the
/// radius (self excluded), sorted by index; the nearest other point when the
/// radius is empty.
fn sampled_neighbors(cloud: &PointCloud, tree: &KdTree<'_>, i: usize, cfg: &FeatureConfig) -> Vec<usize> {
    let mut neighbors = tree.within_radius(cloud.point(i), cfg.radius);
    neighbors.retain(|&j| j != i);
    if neighbors.is_empty() {
        return tree
            .knn(cloud.point(i), 2, false)
            .map(|hits| hits.into_iter().map(|(j, _)| j).filter(|&j| j != i).take(1).collect())
            .unwrap_or_default();
    }
    if neighbors.len() > cfg.samples {
        let mut rng = point_rng(cfg.seed, i);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, neighbors.len(), cfg.samples)
            .into_iter()
            .map(|k| neighbors[k])
            .collect();
        picked.sort_unstable();
        neighbors = picked;
    }
    neighbors
}

/// Unnormalized 20D aggregates (weighted mean then population std of the
/// raw features), row-major.
pub fn aggregate_features(cloud: &PointCloud, cfg: &FeatureConfig, exec: Execution) -> Result<Vec<f64>> {
    cfg.validate()?;
    if cloud.len() < 2 {
        return Err(Error::InvalidInput("descriptor needs at least two points".into()));
    }
    let tree = KdTree::new(cloud);
    let normals = estimate_normals_with(cloud, &tree, cfg.radius, exec);
    let weights = cfg.weights.as_array();
    let rows = exec.map_range(cloud.len(), |i| {
        let neighbors = sampled_neighbors(cloud, &tree, i, cfg);
        let mut sum = [0.0; RAW_DIM];
        let mut sum_sq = [0.0; RAW_DIM];
        for &j in &neighbors {
            let raw = raw_feature_10d(cloud, &normals, i, j);
            for k in 0..RAW_DIM {
                let v = raw[k] * weights[k];
                sum[k] += v;
                sum_sq[k] += v * v;
            }
        }
        let n = neighbors.len().max(1) as f64;
        let mut out = [0.0; DESCRIPTOR_DIM];
        for k in 0..RAW_DIM {
            let mean = sum[k] / n;
            out[k] = mean;
            out[RAW_DIM + k] = (sum_sq[k] / n - mean * mean).max(0.0).sqrt();
        }
        out
    });
    Ok(rows.into_iter().flatten().collect())
}

pub fn descriptor(cloud: &PointCloud, cfg: &FeatureConfig) -> Result<FeatureSet> {
    descriptor_with(cloud, cfg, Execution::default())
}

pub fn descriptor_with(cloud: &PointCloud, cfg: &FeatureConfig, exec: Execution) -> Result<FeatureSet> {
    let raw = aggregate_features(cloud, cfg, exec)?;
    let mut set = FeatureSet::from_descriptors(DESCRIPTOR_DIM, raw)?;
    set.radius = cfg.radius;
    set.samples = cfg.samples;
    Ok(set)
}

/// `s_ij = -|f_i - g_j|^2`.
pub fn similarity(source: &FeatureSet, target: &FeatureSet) -> Result<SimilarityMatrix> {
    similarity_with(source, target, Execution::default())
}

pub fn similarity_with(source: &FeatureSet, target: &FeatureSet, exec: Execution) -> Result<SimilarityMatrix> {
    if source.dim() != target.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("descriptor dimension {}", source.dim()),
            actual: format!("descriptor dimension {}", target.dim()),
        });
    }
    let (n, m) = (source.len(), target.len());
    let mut out = DenseMatrix::zeros(n, m);
    exec.for_each_row(out.as_mut_slice(), m, |i, row| {
        let f = source.descriptor(i);
        for (j, s) in row.iter_mut().enumerate() {
            let g = target.descriptor(j);
            *s = -f.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_motion, RigidMotion};
    use rand::{Rng, SeedableRng};

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn degenerate_self_pair() {
        let cloud = random_cloud(0, 30);
        let normals = estimate_normals(&cloud, 0.5);
        let raw = raw_feature_10d(&cloud, &normals, 3, 3);
        assert_eq!(&raw[3..6], &[0.0, 0.0, 0.0]);
        assert_eq!(raw[6], 0.0);
        assert_eq!(raw[7], 0.0);
        assert!(raw[8].abs() < 1e-12);
        assert_eq!(raw[9], 0.0);
    }

    #[test]
    fn parallel_normals_on_a_line() {
        let cloud = PointCloud::from_arrays(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let normals = vec![Vector3::z(), Vector3::z()];
        let raw = raw_feature_10d(&cloud, &normals, 0, 1);
        assert_eq!(raw[8], 0.0);
        assert!((raw[6] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(raw[9], 1.0);
    }

    #[test]
    fn ppf_invariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let cloud = random_cloud(rng.random(), 2);
            let normals: Vec<Vector3<f64>> = (0..2)
                .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize())
                .collect();
            let m = RigidMotion::from_axis_angle(
                Vector3::new(rng.random(), rng.random(), rng.random()),
                rng.random_range(-3.0..3.0),
                Vector3::new(rng.random(), rng.random(), rng.random()),
            );
            let moved = apply_motion(&cloud, &m);
            let moved_normals: Vec<_> = normals.iter().map(|n| m.rotation() * n).collect();
            let a = raw_feature_10d(&cloud, &normals, 0, 1);
            let b = raw_feature_10d(&moved, &moved_normals, 0, 1);
            for k in 6..10 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn descriptors_are_unit_and_deterministic() {
        let cloud = random_cloud(2, 300);
        let cfg = FeatureConfig {
            samples: 8,
            seed: 11,
            ..Default::default()
        };
        let a = descriptor(&cloud, &cfg).unwrap();
        let b = descriptor_with(&cloud, &cfg, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        for i in 0..a.len() {
            let norm: f64 = a.descriptor(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ppf_channels_invariant_for_moved_copy() {
        let cloud = random_cloud(3, 400);
        let m = RigidMotion::from_axis_angle(Vector3::new(0.2, 1.0, -0.4), 0.9, Vector3::new(0.3, -0.2, 0.1));
        let moved = apply_motion(&cloud, &m);
        let cfg = FeatureConfig::default();
        let a = aggregate_features(&cloud, &cfg, Execution::default()).unwrap();
        let b = aggregate_features(&moved, &cfg, Execution::default()).unwrap();
        let mut coord_diff: f64 = 0.0;
        for i in 0..cloud.len() {
            let (ra, rb) = (&a[i * DESCRIPTOR_DIM..(i + 1) * DESCRIPTOR_DIM], &b[i * DESCRIPTOR_DIM..(i + 1) * DESCRIPTOR_DIM]);
            for k in [6, 7, 8, 9, 16, 17, 18, 19] {
                assert!((ra[k] - rb[k]).abs() < 1e-6, "channel {k} of point {i}");
            }
            for k in 0..6 {
                coord_diff = coord_diff.max((ra[k] - rb[k]).abs());
            }
        }
        assert!(coord_diff > 1e-3);
    }

    #[test]
    fn isolated_point_falls_back_to_nearest() {
        let cloud = PointCloud::from_arrays(&[[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [5.0, 5.0, 5.0]]).unwrap();
        let cfg = FeatureConfig {
            radius: 0.1,
            ..Default::default()
        };
        let set = descriptor(&cloud, &cfg).unwrap();
        assert!(set.descriptor(2).iter().all(|v| v.is_finite()));
        assert!(descriptor(&PointCloud::from_arrays(&[[0.0; 3]]).unwrap(), &cfg).is_err());
    }

    #[test]
    fn similarity_properties() {
        let cloud = random_cloud(4, 80);
        let f = descriptor(&cloud, &FeatureConfig::default()).unwrap();
        let s = similarity(&f, &f).unwrap();
        for i in 0..80 {
            assert_eq!(s[(i, i)], 0.0);
            for j in 0..80 {
                assert!(s[(i, j)] <= 0.0 && s[(i, j)] >= -4.0);
            }
        }
        let other = FeatureSet::from_descriptors(3, vec![1.0; 6]).unwrap();
        assert!(similarity(&f, &other).is_err());
    }

    #[test]
    fn similarity_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fa = FeatureSet::from_descriptors(5, a).unwrap();
        let fb = FeatureSet::from_descriptors(5, b).unwrap();
        let s = similarity(&fa, &fb).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..5 {
                    let d = fa.descriptor(i)[k] - fb.descriptor(j)[k];
                    acc += d * d;
                }
                assert!((s[(i, j)] + acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_export() {
        let f = FeatureSet::from_descriptors(2, vec![3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "point,f0,f1\n0,0.6,0.8\n");
    }
}
