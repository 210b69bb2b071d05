//! Rigid transforms in 3D and in the plane.
//!
//! The canonical representation is a unit quaternion plus a translation.
//! Quaternions are re-normalized after every composition so long chains do
//! not drift off the unit sphere.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Rotation plus translation, mapping child-frame coordinates into the parent frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::new(x, y, z))
    }

    /// Rotation about `axis` (any non-zero vector) by `angle` radians, then translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = match nalgebra::Unit::try_new(axis, 1e-15) {
            Some(axis) => UnitQuaternion::from_axis_angle(&axis, angle),
            None => UnitQuaternion::identity(),
        };
        Self::new(rotation, translation)
    }

    /// Builds a transform from raw quaternion components `(qx, qy, qz, qw)`.
    ///
    /// Components already on the unit sphere (to 1e-12) are kept bit-for-bit so
    /// parsed values survive a write/read cycle unchanged.
    pub fn from_components(t: [f64; 3], q: [f64; 4]) -> Option<Self> {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-9 || t.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let rotation = if (norm - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(quat)
        } else {
            UnitQuaternion::new_normalize(quat)
        };
        Some(Self::new(rotation, Vector3::new(t[0], t[1], t[2])))
    }

    /// `(tx, ty, tz, qx, qy, qz, qw)` in file order.
    pub fn to_components(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            q.i,
            q.j,
            q.k,
            q.w,
        ]
    }

    /// Applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let rotation =
            UnitQuaternion::new_normalize(self.rotation.into_inner() * other.rotation.into_inner());
        RigidTransform {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rotation = self.rotation.inverse();
        RigidTransform {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Homogeneous 4x4 matrix.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Inverse of [`RigidTransform::to_matrix`]; the rotation block is orthonormalized.
    pub fn from_matrix(m: &Matrix4<f64>) -> RigidTransform {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let rot = Rotation3::from_matrix_eps(&r, 1e-12, 100, Rotation3::identity());
        RigidTransform::new(
            UnitQuaternion::from_rotation_matrix(&rot),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Rotation angle in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    pub fn translation_norm(&self) -> f64 {
        self.translation.norm()
    }

    /// Angle and translation distance between `self` and `other`.
    pub fn difference(&self, other: &RigidTransform) -> (f64, f64) {
        let d = self.inverse().compose(other);
        (
            d.rotation_angle(),
            (self.translation - other.translation).norm(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.to_components().iter().all(|v| v.is_finite())
    }

    /// SE(3) exponential of a twist `[rho; phi]` (translation part first).
    pub fn exp(xi: &Vector6<f64>) -> RigidTransform {
        let rho = Vector3::new(xi[0], xi[1], xi[2]);
        let phi = Vector3::new(xi[3], xi[4], xi[5]);
        let rotation = UnitQuaternion::from_scaled_axis(phi);
        let v = left_jacobian(&phi);
        RigidTransform::new(rotation, v * rho)
    }

    /// SE(3) logarithm, inverse of [`RigidTransform::exp`].
    pub fn log(&self) -> Vector6<f64> {
        let phi = self.rotation.scaled_axis();
        let v_inv = left_jacobian_inverse(&phi);
        let rho = v_inv * self.translation;
        Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z)
    }
}

impl fmt::Display for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.to_components();
        write!(
            f,
            "{} {} {} {} {} {} {}",
            c[0], c[1], c[2], c[3], c[4], c[5], c[6]
        )
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_components().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let c = <[f64; 7]>::deserialize(d)?;
        RigidTransform::from_components([c[0], c[1], c[2]], [c[3], c[4], c[5], c[6]])
            .ok_or_else(|| serde::de::Error::custom("invalid transform components"))
    }
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-8 {
        return Matrix3::identity() + 0.5 * k + k * k / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity()
        + (1.0 - theta.cos()) / t2 * k
        + (theta - theta.sin()) / (t2 * theta) * k * k
}

fn left_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-8 {
        return Matrix3::identity() - 0.5 * k + k * k / 12.0;
    }
    let half = 0.5 * theta;
    let coef = (1.0 - half * half.cos() / half.sin()) / (theta * theta);
    Matrix3::identity() - 0.5 * k + coef * k * k
}

/// Planar pose `(x, y, yaw)` used by the 2D scan matcher and planar odometry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2 {
            x: self.x + c * other.x - s * other.y,
            y: self.y + s * other.x + c * other.y,
            yaw: wrap_angle(self.yaw + other.yaw),
        }
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2 {
            x: -(c * self.x + s * self.y),
            y: -(-s * self.x + c * self.y),
            yaw: wrap_angle(-self.yaw),
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c * p[0] - s * p[1] + self.x, s * p[0] + c * p[1] + self.y]
    }

    /// Lifts the planar pose into 3D (rotation about +z).
    pub fn to_rigid(&self) -> RigidTransform {
        RigidTransform::from_axis_angle(Vector3::z(), self.yaw, Vector3::new(self.x, self.y, 0.0))
    }

    /// Projects a 3D transform onto the plane, keeping yaw about +z.
    pub fn from_rigid(t: &RigidTransform) -> Pose2 {
        let (_, _, yaw) = t.rotation.euler_angles();
        Pose2::new(t.translation.x, t.translation.y, yaw)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}
