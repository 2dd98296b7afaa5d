//! Rigid transforms and their Lie-algebra parameterization.
//!
//! A [`PoseSE3`] used as a camera pose is camera-to-world: it maps points
//! expressed in the camera frame into the world frame. The renderer's view
//! transform is the inverse of a camera pose.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this rotation angle the exponential and logarithm switch to their
/// Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;

/// Largest rotation angle accepted by [`log_map`]. Rotations closer to pi
/// than this have an ill-conditioned axis.
pub const LOG_MAX_ANGLE: f64 = PI - 1e-5;

/// Rigid transform `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Lie-algebra coordinates of a rigid transform.
///
/// `omega` is the axis-angle rotation part and `v` the translational part
/// before it is passed through the SE(3) left Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_scaled_axis(axis.normalize() * angle);
        Self::new(*rot.matrix(), translation)
    }

    /// Build from a quaternion given as `(x, y, z, w)`; it is normalized first.
    pub fn from_quaternion(q_xyzw: [f64; 4], translation: Vector3<f64>) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(
            q_xyzw[3], q_xyzw[0], q_xyzw[1], q_xyzw[2],
        ));
        Self::new(*q.to_rotation_matrix().matrix(), translation)
    }

    /// Rotation as a unit quaternion `(x, y, z, w)` with `w >= 0`.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        compose(self, other)
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3::new(rt, -(rt * self.translation))
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Replace the rotation by the nearest orthonormal matrix (polar
    /// decomposition), guarding against drift after repeated updates.
    pub fn orthonormalized(&self) -> PoseSE3 {
        PoseSE3::new(nearest_rotation(&self.rotation), self.translation)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Mul for PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        compose(&self, &rhs)
    }
}

impl Twist {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { omega, v }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    /// Stacked as `[omega; v]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.omega);
        out.fixed_rows_mut::<3>(3).copy_from(&self.v);
        out
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self::new(x.fixed_rows::<3>(0).into_owned(), x.fixed_rows::<3>(3).into_owned())
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

pub(crate) fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = 0.5 * vee(&(r - r.transpose())).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

pub(crate) fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// SE(3) exponential: Rodrigues rotation and the left-Jacobian applied to `v`.
pub fn exp_map(t: &Twist) -> Result<PoseSE3> {
    if !t.omega.iter().chain(t.v.iter()).all(|x| x.is_finite()) {
        return Err(Error::invalid("twist has non-finite components"));
    }
    Ok(exp_map_unchecked(t))
}

pub(crate) fn exp_map_unchecked(t: &Twist) -> PoseSE3 {
    let theta = t.omega.norm();
    let k = skew(&t.omega);
    let k2 = k * k;
    let (a, b, c) = if theta < SMALL_ANGLE {
        (1.0, 0.5, 1.0 / 6.0)
    } else {
        let t2 = theta * theta;
        (
            theta.sin() / theta,
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    let rotation = Matrix3::identity() + k * a + k2 * b;
    let left_jacobian = Matrix3::identity() + k * b + k2 * c;
    PoseSE3::new(rotation, left_jacobian * t.v)
}

/// SE(3) logarithm, the inverse of [`exp_map`] for angles below
/// [`LOG_MAX_ANGLE`].
pub fn log_map(p: &PoseSE3) -> Result<Twist> {
    let r = &p.rotation;
    let theta = rotation_angle(r);
    if !theta.is_finite() || theta >= LOG_MAX_ANGLE {
        return Err(Error::DegenerateRotation { angle: theta });
    }
    let w = vee(&(r - r.transpose()));
    let omega = if theta < SMALL_ANGLE {
        w * 0.5
    } else {
        w * (theta / (2.0 * theta.sin()))
    };
    let k = skew(&omega);
    let coeff = if theta < SMALL_ANGLE {
        1.0 / 12.0
    } else {
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - k * 0.5 + (k * k) * coeff;
    Ok(Twist::new(omega, v_inv * p.translation))
}

/// Matrix product `a * b`.
pub fn compose(a: &PoseSE3, b: &PoseSE3) -> PoseSE3 {
    PoseSE3::new(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
    )
}

pub fn invert(p: &PoseSE3) -> PoseSE3 {
    p.inverse()
}

/// Turn consecutive relative poses into absolute poses.
///
/// `relatives[t]` is the pose of frame `t + 1` expressed in frame `t`. The
/// first absolute pose is the identity and
/// `absolutes[i] = absolutes[i - 1] * relatives[i - 1]`.
pub fn chain_poses(relatives: &[PoseSE3]) -> Vec<PoseSE3> {
    let mut out = Vec::with_capacity(relatives.len() + 1);
    out.push(PoseSE3::identity());
    for rel in relatives {
        let next = compose(out.last().expect("non-empty"), rel);
        out.push(next);
    }
    out
}
