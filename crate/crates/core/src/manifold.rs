//! Rotations and rigid transforms on SO(3) / SE(3).
//!
//! Rotations are stored as Hamilton unit quaternions with world-from-body
//! semantics: `R_wb * v_b = v_w`. Every constructor canonicalizes the
//! double cover so that `w >= 0`.
//!
//! Tangent increments are applied on the right, `R ⊞ δ = R · Exp(δ)`, which
//! is the convention used by every factor Jacobian in the estimator.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};
use std::ops::Mul;

/// Below this angle [rad] exp/log switch to their series expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric (cross-product) matrix of `v`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A unit quaternion rotation with `w >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    /// Builds a rotation from raw `(w, x, y, z)` components; the input is
    /// normalized and canonicalized.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::from_quaternion(Quaternion::new(w, x, y, z))
    }

    pub fn from_quaternion(q: Quaternion<f64>) -> Self {
        let mut q = UnitQuaternion::new_normalize(q).into_inner();
        if q.w < 0.0 {
            q = -q;
        }
        Self(UnitQuaternion::new_unchecked(q))
    }

    pub fn from_unit(q: UnitQuaternion<f64>) -> Self {
        Self::from_quaternion(q.into_inner())
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*m);
        Self::from_unit(UnitQuaternion::from_rotation_matrix(&rot))
    }

    /// Z-Y-X (yaw, pitch, roll) Euler angles in radians.
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self::from_unit(UnitQuaternion::from_euler_angles(roll, pitch, yaw))
    }

    /// Exponential map from an axis-angle vector.
    pub fn exp(omega: &Vector3<f64>) -> Self {
        let theta2 = omega.norm_squared();
        let theta = theta2.sqrt();
        let (w, s) = if theta < SMALL_ANGLE {
            (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
        } else {
            let half = 0.5 * theta;
            (half.cos(), half.sin() / theta)
        };
        Self::from_wxyz(w, s * omega.x, s * omega.y, s * omega.z)
    }

    /// Logarithm map; the result has norm in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        let q = self.0.quaternion();
        let v = q.imag();
        let n2 = v.norm_squared();
        let n = n2.sqrt();
        let w = q.w;
        if n < 0.5 * SMALL_ANGLE {
            // 2 atan(n/w)/n ≈ (2/w)(1 - n²/(3w²))
            v * (2.0 / w) * (1.0 - n2 / (3.0 * w * w))
        } else {
            let theta = 2.0 * n.atan2(w);
            v * (theta / n)
        }
    }

    pub fn w(&self) -> f64 {
        self.0.w
    }

    /// `(w, x, y, z)` components.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.quaternion().norm()
    }

    pub fn inverse(&self) -> Self {
        Self::from_unit(self.0.inverse())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn inverse_rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.inverse_transform_vector(v)
    }

    /// `self · Exp(delta)`
    pub fn plus(&self, delta: &Vector3<f64>) -> Self {
        *self * Self::exp(delta)
    }

    /// `Log(other⁻¹ · self)`, the increment with `other.plus(d) == self`.
    pub fn minus(&self, other: &Rotation) -> Vector3<f64> {
        (other.inverse() * *self).log()
    }

    /// Geodesic angle to another rotation [rad].
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.minus(other).norm()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation::from_unit(self.0 * rhs.0)
    }
}

/// Right Jacobian of SO(3): `Exp(φ + δ) ≈ Exp(φ) Exp(Jr(φ) δ)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-10 {
        return Matrix3::identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() - ((1.0 - theta.cos()) / theta2) * k
        + ((theta - theta.sin()) / (theta2 * theta)) * k * k
}

/// Inverse of [`right_jacobian`].
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-10 {
        return Matrix3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let theta = theta2.sqrt();
    let coef = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coef * k * k
}

/// Rigid transform `T_ab`: maps points expressed in frame b into frame a.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: Rotation,
}

/// Paired tangent increment for a [`Pose`]: translation is added in the
/// parent frame, rotation on the right.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PoseTangent {
    pub translation: Vector3<f64>,
    pub rotation: Vector3<f64>,
}

impl Pose {
    pub fn new(translation: Vector3<f64>, rotation: Rotation) -> Self {
        Self { translation, rotation }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: self.translation + self.rotation.rotate(&other.translation),
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rotation = self.rotation.inverse();
        Pose {
            translation: -rotation.rotate(&self.translation),
            rotation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_rotate(&(p - self.translation))
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn plus(&self, d: &PoseTangent) -> Pose {
        Pose {
            translation: self.translation + d.translation,
            rotation: self.rotation.plus(&d.rotation),
        }
    }

    pub fn minus(&self, other: &Pose) -> PoseTangent {
        PoseTangent {
            translation: self.translation - other.translation,
            rotation: self.rotation.minus(&other.rotation),
        }
    }
}

/// Free-function spellings of the core operations.
pub fn exp_so3(omega: &Vector3<f64>) -> Rotation {
    Rotation::exp(omega)
}

pub fn log_so3(r: &Rotation) -> Vector3<f64> {
    r.log()
}

pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn pose_inverse(a: &Pose) -> Pose {
    a.inverse()
}

pub fn transform_point(a: &Pose, p: &Vector3<f64>) -> Vector3<f64> {
    a.transform_point(p)
}
