use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::GeometryError;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `RᵀR = I` and `det R = 1` accepted by [`RigidTransform::new`].
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Rotation followed by translation: `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= ORTHONORMAL_TOL) || !((det - 1.0).abs() <= ORTHONORMAL_TOL) {
            return Err(GeometryError::NotARotation { orthogonality: ortho, determinant: det });
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { rotation: Mat3::identity(), translation }
    }

    pub fn from_axis_angle(axis_angle: &Vec3, translation: Vec3) -> Self {
        Self { rotation: so3_exp(axis_angle), translation }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Geodesic angle between the two rotations, in radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    /// Re-projects the rotation onto SO(3) (polar decomposition).
    pub fn orthonormalized(&self) -> RigidTransform {
        RigidTransform { rotation: project_to_so3(&self.rotation), translation: self.translation }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Serialize, Deserialize)]
struct RigidTransformRepr {
    /// Row-major.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let r = &self.rotation;
        RigidTransformRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = RigidTransformRepr::deserialize(d)?;
        let r = repr.rotation;
        let rotation = Mat3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        RigidTransform::new(rotation, Vec3::from(repr.translation))
            .map_err(serde::de::Error::custom)
    }
}

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn so3_exp(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let k = skew(w);
    if theta2 < 1e-16 {
        // second-order Taylor expansion
        return Mat3::identity() + k + 0.5 * k * k;
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Mat3::identity() + a * k + b * k * k
}

/// Inverse of [`so3_exp`], returning an axis-angle vector with angle in `[0, π]`.
pub fn so3_log(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let v = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-8 {
        return 0.5 * v;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // near π the antisymmetric part vanishes; recover the axis from R + I
        let b = (r + Mat3::identity()) * 0.5;
        let mut col = 0;
        for i in 1..3 {
            if b[(i, i)] > b[(col, col)] {
                col = i;
            }
        }
        let mut axis: Vec3 = b.column(col).into();
        axis /= axis.norm();
        if axis.dot(&v) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    v * (theta / (2.0 * theta.sin()))
}

/// Left Jacobian of SO(3): `∂exp(w)/∂w_c · exp(w)ᵀ = [J_l(w) e_c]×`.
pub fn so3_left_jacobian(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let k = skew(w);
    if theta2 < 1e-12 {
        return Mat3::identity() + 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let theta = theta2.sqrt();
    let a = (1.0 - theta.cos()) / theta2;
    let b = (theta - theta.sin()) / (theta2 * theta);
    Mat3::identity() + a * k + b * k * k
}

/// Angle of a rotation matrix in radians. Equal to
/// `arccos((tr R − 1) / 2)` but taken with atan2 of the sine and cosine
/// parts, which keeps full precision near zero.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let v = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    (0.5 * v.norm()).atan2((r.trace() - 1.0) * 0.5)
}

pub fn project_to_so3(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut d = Mat3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}
