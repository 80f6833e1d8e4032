use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::Se3Error;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Rigid transform in SE(3): `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not proper orthonormal matrices.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, Se3Error> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        let det = rotation.determinant();
        if !(ortho < ORTHONORMAL_TOL) || !((det - 1.0).abs() < ORTHONORMAL_TOL) {
            return Err(Se3Error::NotARotation { ortho_error: ortho, det });
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Se3Error::NonFinite);
        }
        Ok(Self { rotation, translation })
    }

    /// Internal constructor for rotations that are proper by construction.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_quaternion(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *rotation.to_rotation_matrix().matrix(),
            translation,
        }
    }

    /// Rotation about the world z axis by `angle` radians.
    pub fn rot_z(angle: f64) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Self {
            rotation: *Rotation3::from_axis_angle(&axis, angle).matrix(),
            translation: Vector3::zeros(),
        }
    }

    /// Yaw rotation about z followed by a translation.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        let mut pose = Self::rot_z(yaw);
        pose.translation = Vector3::new(x, y, z);
        pose
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn with_translation(mut self, translation: Vector3<f64>) -> Self {
        self.translation = translation;
        self
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle of `self^-1 ∘ other` in radians, in `[0, π]`.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Yaw of the rotated x axis about world z.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Linear interpolation of translation and spherical interpolation of
    /// rotation; `s = 0` gives `self`, `s = 1` gives `other`.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        if s <= 0.0 {
            return *self;
        }
        if s >= 1.0 {
            return *other;
        }
        let q = slerp(&self.quaternion(), &other.quaternion(), s);
        Pose::from_quaternion(q, self.translation.lerp(&other.translation, s))
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4x4 homogeneous matrix; the last row is exactly `(0, 0, 0, 1)`.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_row_major(m: &[f64]) -> Result<Pose, Se3Error> {
        if m.len() != 16 {
            return Err(Se3Error::BadLength { expected: 16, got: m.len() });
        }
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Se3Error::BadHomogeneousRow);
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Pose::new(rotation, Vector3::new(m[3], m[7], m[11]))
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        Pose::from_row_major(&values).map_err(serde::de::Error::custom)
    }
}

/// Geodesic angle of a rotation matrix.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    // the trace formula loses precision near 0, so use atan2 of the skew part
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin2 = skew.norm();
    let cos2 = r.trace() - 1.0;
    sin2.atan2(cos2)
}

/// Shortest-arc spherical interpolation between unit quaternions.
pub fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    let qa = a.quaternion();
    let mut qb = *b.quaternion();
    let mut dot = qa.dot(&qb);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    if dot > 0.9995 {
        let q: Quaternion<f64> = qa * (1.0 - s) + qb * s;
        return UnitQuaternion::new_normalize(q);
    }
    let theta = dot.clamp(-1.0, 1.0).acos();
    let sin = theta.sin();
    let wa = ((1.0 - s) * theta).sin() / sin;
    let wb = (s * theta).sin() / sin;
    UnitQuaternion::new_normalize(qa * wa + qb * wb)
}

/// End-effector command: target pose plus the gripper and collision flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub pose: Pose,
    pub gripper_open: bool,
    pub allow_collision: bool,
}

impl Action {
    pub const DIM: usize = 18;

    pub fn new(pose: Pose, gripper_open: bool, allow_collision: bool) -> Self {
        Self {
            pose,
            gripper_open,
            allow_collision,
        }
    }

    /// 16 row-major pose entries, then the gripper flag, then the collision flag.
    pub fn to_vector(&self) -> [f64; 18] {
        let mut out = [0.0; 18];
        out[..16].copy_from_slice(&self.pose.to_row_major());
        out[16] = if self.gripper_open { 1.0 } else { 0.0 };
        out[17] = if self.allow_collision { 1.0 } else { 0.0 };
        out
    }

    pub fn from_vector(v: &[f64]) -> Result<Action, Se3Error> {
        if v.len() != Self::DIM {
            return Err(Se3Error::BadLength { expected: Self::DIM, got: v.len() });
        }
        let flag = |x: f64| match x {
            x if x == 1.0 => Ok(true),
            x if x == 0.0 => Ok(false),
            _ => Err(Se3Error::BadFlag(x)),
        };
        Ok(Action {
            pose: Pose::from_row_major(&v[..16])?,
            gripper_open: flag(v[16])?,
            allow_collision: flag(v[17])?,
        })
    }
}
