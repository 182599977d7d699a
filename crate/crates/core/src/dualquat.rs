//! Quaternion and dual quaternion algebra for rigid motions.
//!
//! A unit dual quaternion `real + ε·dual` encodes the motion `p ↦ R·p + t`
//! with `real` the rotation quaternion and `dual = ½·[0, t] ⊗ real`.

use std::ops::{Add, Mul, Neg};

use serde::{Deserialize, Serialize};

use crate::{Error, Mat3, Result, Vec3};

/// Tolerance used when validating externally supplied rotation matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// A quaternion `w + x·i + y·j + z·k`, serialized scalar-first as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 4]> for Quaternion {
    fn from(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Quaternion> for [f64; 4] {
    fn from(q: Quaternion) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };
    pub const ZERO: Quaternion = Quaternion { w: 0.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    /// Pure quaternion `[0, v]`.
    pub fn pure(v: &Vec3) -> Self {
        Quaternion::new(0.0, v.x, v.y, v.z)
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Quaternion::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Quaternion::new(c, s * a.x, s * a.y, s * a.z)
    }

    /// Rotation encoded by a rotation vector (axis × angle).
    pub fn from_rotation_vector(v: &Vec3) -> Self {
        Quaternion::from_axis_angle(v, v.norm())
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn conjugate(&self) -> Self {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Quaternion::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    /// Unit quaternion in the same direction; fails on the zero quaternion.
    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidRotation(format!(
                "cannot normalize quaternion with norm {n}"
            )));
        }
        Ok(self.scale(1.0 / n))
    }

    /// Rotation matrix of a unit quaternion. Non-unit input is normalized.
    pub fn to_rotation_matrix(&self) -> Mat3 {
        let q = self.scale(1.0 / self.norm());
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Quaternion of an orthonormal rotation matrix (Shepperd's method),
    /// with sign chosen so that `w >= 0`.
    pub fn from_rotation_matrix(m: &Mat3) -> Self {
        let tr = m.trace();
        let q = if tr > m[(0, 0)].max(m[(1, 1)]).max(m[(2, 2)]) {
            let s = 2.0 * (1.0 + tr).sqrt();
            Quaternion::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            Quaternion::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            Quaternion::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            Quaternion::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let q = q.scale(1.0 / q.norm());
        if q.w < 0.0 {
            -q
        } else {
            q
        }
    }

    /// Rotate a vector by conjugation `q ⊗ [0, v] ⊗ q*` (q assumed unit).
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let q = self.scale(1.0 / self.norm());
        2.0 * q.w.abs().min(1.0).acos()
    }

    /// Geodesic distance between the rotations of two quaternions, radians.
    pub fn geodesic_distance(&self, o: &Quaternion) -> f64 {
        let d = self.dot(o) / (self.norm() * o.norm());
        2.0 * d.abs().min(1.0).acos()
    }
}

/// Hamilton product.
pub fn quat_mul(a: &Quaternion, b: &Quaternion) -> Quaternion {
    Quaternion::new(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, rhs: Quaternion) -> Quaternion {
        quat_mul(&self, &rhs)
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        self.scale(-1.0)
    }
}

/// Rigid motion `p ↦ rotation·p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigidTransformRepr", into = "RigidTransformRepr")]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct RigidTransformRepr {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl TryFrom<RigidTransformRepr> for RigidTransform {
    type Error = Error;
    fn try_from(r: RigidTransformRepr) -> Result<Self> {
        let m = Mat3::from_row_slice(&r.rotation);
        RigidTransform::new(m, crate::vec3(r.translation))
    }
}

impl From<RigidTransform> for RigidTransformRepr {
    fn from(t: RigidTransform) -> Self {
        let r = &t.rotation;
        RigidTransformRepr {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: crate::arr3(&t.translation),
        }
    }
}

/// Checks `m` is orthonormal with determinant +1 within `tol`.
pub fn check_rotation(m: &Mat3, tol: f64) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidTransform("non-finite rotation entry".into()));
    }
    let err = (m.transpose() * m - Mat3::identity()).abs().max();
    if err > tol {
        return Err(Error::InvalidTransform(format!(
            "rotation is not orthonormal (max |RᵀR − I| = {err:e})"
        )));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > tol {
        return Err(Error::InvalidTransform(format!(
            "rotation determinant is {det}, expected +1"
        )));
    }
    Ok(())
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0),
        translation: Vec3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation, ORTHONORMAL_TOL)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite translation".into()));
        }
        Ok(RigidTransform { rotation, translation })
    }

    pub fn from_translation(t: Vec3) -> Self {
        RigidTransform { rotation: Mat3::identity(), translation: t }
    }

    pub fn from_quaternion(q: &Quaternion, translation: Vec3) -> Self {
        RigidTransform { rotation: q.to_rotation_matrix(), translation }
    }

    /// Rotation given as a rotation vector (axis-angle) followed by a translation.
    pub fn from_axis_angle(rotation_vector: &Vec3, translation: Vec3) -> Self {
        RigidTransform::from_quaternion(&Quaternion::from_rotation_vector(rotation_vector), translation)
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Applies the inverse motion without forming it.
    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rotation vector (axis × angle) of the rotation part.
    pub fn rotation_vector(&self) -> Vec3 {
        let q = Quaternion::from_rotation_matrix(&self.rotation);
        let s = q.vector().norm();
        if s < 1e-15 {
            return 2.0 * q.vector();
        }
        q.vector() * (2.0 * s.atan2(q.w) / s)
    }
}

/// Dual quaternion `real + ε·dual`, serialized as
/// `{"real":[w,x,y,z],"dual":[w,x,y,z]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualQuaternion {
    pub real: Quaternion,
    pub dual: Quaternion,
}

impl Neg for DualQuaternion {
    type Output = DualQuaternion;
    fn neg(self) -> DualQuaternion {
        DualQuaternion { real: -self.real, dual: -self.dual }
    }
}

impl DualQuaternion {
    pub const IDENTITY: DualQuaternion =
        DualQuaternion { real: Quaternion::IDENTITY, dual: Quaternion::ZERO };

    pub const fn new(real: Quaternion, dual: Quaternion) -> Self {
        DualQuaternion { real, dual }
    }

    /// Rotation `q` (normalized here) followed by translation `t`.
    pub fn from_rotation_translation(q: &Quaternion, t: &Vec3) -> Result<Self> {
        let real = q.normalize()?;
        let dual = quat_mul(&Quaternion::pure(t), &real).scale(0.5);
        Ok(DualQuaternion { real, dual })
    }

    pub fn from_translation(t: &Vec3) -> Self {
        DualQuaternion { real: Quaternion::IDENTITY, dual: Quaternion::pure(t).scale(0.5) }
    }

    pub fn scale(&self, s: f64) -> Self {
        DualQuaternion { real: self.real.scale(s), dual: self.dual.scale(s) }
    }

    pub fn add(&self, o: &DualQuaternion) -> Self {
        DualQuaternion { real: self.real + o.real, dual: self.dual + o.dual }
    }

    /// Quaternion conjugate of both parts; the inverse of a unit dual quaternion.
    pub fn conjugate(&self) -> Self {
        DualQuaternion { real: self.real.conjugate(), dual: self.dual.conjugate() }
    }

    /// True when `|real| = 1` and `real·dual = 0` within `tol`.
    pub fn is_unit(&self, tol: f64) -> bool {
        (self.real.norm() - 1.0).abs() <= tol && self.real.dot(&self.dual).abs() <= tol
    }

    /// Nearest unit dual quaternion with the same point action: scale by
    /// `1/|real|`, then drop the component of `dual` along `real`.
    pub fn normalize(&self) -> Result<Self> {
        let n = self.real.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidRotation(format!(
                "dual quaternion real part has norm {n}"
            )));
        }
        let real = self.real.scale(1.0 / n);
        let dual = self.dual.scale(1.0 / n);
        let d = real.dot(&dual);
        let dual = Quaternion::new(
            dual.w - d * real.w,
            dual.x - d * real.x,
            dual.y - d * real.y,
            dual.z - d * real.z,
        );
        Ok(DualQuaternion { real, dual })
    }

    /// Translation of a unit dual quaternion: vector part of `2·dual ⊗ real*`.
    pub fn translation(&self) -> Vec3 {
        quat_mul(&self.dual, &self.real.conjugate()).vector() * 2.0
    }

    /// Apply to a point. Non-unit input is normalized first; an all-zero
    /// real part is reported as an error by [`DualQuaternion::normalize`].
    pub fn try_apply(&self, p: &Vec3) -> Result<Vec3> {
        let u = if self.is_unit(1e-12) { *self } else { self.normalize()? };
        Ok(u.real.rotate(p) + u.translation())
    }

    /// Apply to a point, assuming a non-degenerate real part.
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        dq_apply(self, p)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &DualQuaternion) -> Self {
        DualQuaternion {
            real: quat_mul(&self.real, &other.real),
            dual: quat_mul(&self.real, &other.dual) + quat_mul(&self.dual, &other.real),
        }
    }

    /// Same motion with the sign chosen so that `real.w >= 0`.
    pub fn canonical(&self) -> Self {
        if self.real.w < 0.0 {
            -*self
        } else {
            *self
        }
    }

    pub fn to_array(&self) -> [f64; 8] {
        let (r, d) = (self.real, self.dual);
        [r.w, r.x, r.y, r.z, d.w, d.x, d.y, d.z]
    }
}

/// Dual quaternion from the 7-scalar pose record: translation `(t1, t2, t3)`
/// and an unnormalized rotation quaternion `qr`.
pub fn dq_from_pose7(t1: f64, t2: f64, t3: f64, qr: &Quaternion) -> Result<DualQuaternion> {
    let real = qr.normalize()?;
    let qt = Quaternion::new(0.0, t1, t2, t3);
    let dual = quat_mul(&qt, &real).scale(0.5);
    Ok(DualQuaternion { real, dual })
}

/// Rigid action on a point. Non-unit input is normalized first; a zero real
/// part is logged and yields NaN coordinates, use
/// [`DualQuaternion::try_apply`] to get the error instead.
pub fn dq_apply(dq: &DualQuaternion, p: &Vec3) -> Vec3 {
    match dq.try_apply(p) {
        Ok(v) => v,
        Err(e) => {
            log::error!("dq_apply on degenerate dual quaternion: {e}");
            Vec3::repeat(f64::NAN)
        }
    }
}

pub fn dq_inverse(dq: &DualQuaternion) -> DualQuaternion {
    dq.conjugate()
}

pub fn dq_to_rigid(dq: &DualQuaternion) -> Result<RigidTransform> {
    let u = dq.normalize()?;
    Ok(RigidTransform { rotation: u.real.to_rotation_matrix(), translation: u.translation() })
}

pub fn rigid_to_dq(rt: &RigidTransform) -> Result<DualQuaternion> {
    check_rotation(&rt.rotation, ORTHONORMAL_TOL)?;
    let q = Quaternion::from_rotation_matrix(&rt.rotation);
    Ok(DualQuaternion::from_rotation_translation(&q, &rt.translation)?.canonical())
}
