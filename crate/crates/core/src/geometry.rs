//! Point clouds, rigid motions and the Euler-angle parameterization used by
//! the evaluation metrics.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Ordered set of 3D points. Every coordinate is finite and the cloud holds
/// at least one point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud must hold at least one point".into()));
        }
        if !points.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("point cloud"));
        }
        Ok(Self { points })
    }

    pub fn from_arrays(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with collections.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Vector3<f64> {
        &self.points[i]
    }

    pub fn into_points(self) -> Vec<Vector3<f64>> {
        self.points
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Points at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn transformed(&self, motion: &RigidMotion) -> Self {
        apply_motion(self, motion)
    }
}

/// Rotation in SO(3) plus translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ROTATION_TOLERANCE: f64 = 1e-9;

impl RigidMotion {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Accepts `rotation` only if it is a proper rotation within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !translation.iter().all(|v| v.is_finite()) || !rotation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("rigid motion"));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "not a rotation matrix (orthogonality error {ortho:e}, det {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Re-projects an arbitrary 3x3 matrix onto the nearest rotation.
    pub fn from_approximate(matrix: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("translation"));
        }
        let rotation = linalg::project_to_so3(&matrix)
            .ok_or_else(|| Error::InvalidInput("matrix cannot be projected onto SO(3)".into()))?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle_rad: f64, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle_rad);
        Self {
            rotation: rot.into_inner(),
            translation,
        }
    }

    pub fn from_euler(angles: EulerAngles, translation: Vector3<f64>) -> Self {
        Self {
            rotation: euler_to_rotation(angles),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle in degrees.
    pub fn angle_deg(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }
}

impl Default for RigidMotion {
    fn default() -> Self {
        Self::identity()
    }
}

/// Output point i is `R x_i + t`; size and order preserved.
pub fn apply_motion(cloud: &PointCloud, motion: &RigidMotion) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| motion.apply(p)).collect(),
    }
}

/// Angle of `a^T b` in degrees, via `atan2` of its skew and trace parts so
/// that it stays accurate near 0 and 180 degrees.
pub fn rotation_angle_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let q = a.transpose() * b;
    let sin = (q - q.transpose()).norm() / (2.0 * 2f64.sqrt());
    let cos = (q.trace() - 1.0) / 2.0;
    sin.atan2(cos).to_degrees()
}

/// `compose(a, b)` applies `b` first, then `a`.
pub fn compose(a: &RigidMotion, b: &RigidMotion) -> RigidMotion {
    RigidMotion {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn inverse(m: &RigidMotion) -> RigidMotion {
    let rt = m.rotation.transpose();
    RigidMotion {
        rotation: rt,
        translation: -(rt * m.translation),
    }
}

/// Intrinsic Z-Y-X Euler angles in degrees: `R = Rz(yaw) Ry(pitch) Rx(roll)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    /// About z.
    pub yaw: f64,
    /// About y, in [-90, 90].
    pub pitch: f64,
    /// About x.
    pub roll: f64,
}

impl EulerAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }
}

pub fn euler_to_rotation(angles: EulerAngles) -> Matrix3<f64> {
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), angles.yaw.to_radians());
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), angles.pitch.to_radians());
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), angles.roll.to_radians());
    (rz * ry * rx).into_inner()
}

/// Inverse of [`euler_to_rotation`]. At gimbal lock the roll is set to 0 and
/// the whole in-plane rotation is attributed to yaw.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> EulerAngles {
    let sp = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    let cp = (r[(2, 1)].powi(2) + r[(2, 2)].powi(2)).sqrt();
    if cp < 1e-12 {
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        return EulerAngles::new(yaw.to_degrees(), pitch.to_degrees(), 0.0);
    }
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    EulerAngles::new(yaw.to_degrees(), pitch.to_degrees(), roll.to_degrees())
}

#[derive(Serialize, Deserialize)]
struct MotionWire {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for RigidMotion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[3 * i + j] = self.rotation[(i, j)];
            }
        }
        MotionWire {
            rotation,
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidMotion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = MotionWire::deserialize(d)?;
        let rotation = Matrix3::from_row_slice(&wire.rotation);
        let translation = Vector3::from(wire.translation);
        // Serialized rotations carry only ~17 significant digits; re-project
        // so the stored matrix satisfies the SO(3) invariants exactly.
        RigidMotion::new(rotation, translation)
            .or_else(|_| RigidMotion::from_approximate(rotation, translation))
            .map_err(serde::de::Error::custom)
    }
}
