use nalgebra::{Matrix2x3, Vector2};
use serde::{Deserialize, Serialize};

use super::transform::{RigidTransform, Vec3};
use super::GeometryError;

pub type Vec2 = Vector2<f64>;

/// Points closer than this to the image plane (camera frame z) cannot be projected.
pub const MIN_DEPTH: f64 = 1e-9;

/// Pinhole intrinsics with optional two-term radial distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    /// Image size in pixels, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

impl Intrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy, k1: 0.0, k2: 0.0, width: None, height: None }
    }

    pub fn with_image_size(mut self, width: u32, height: u32) -> Self {
        self.width = Some(width);
        self.height = Some(height);
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::NonFinite);
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn has_distortion(&self) -> bool {
        self.k1 != 0.0 || self.k2 != 0.0
    }

    /// Whether a pixel lies inside the image, if the image size is known.
    pub fn contains(&self, px: &Vec2) -> bool {
        match (self.width, self.height) {
            (Some(w), Some(h)) => px.x >= 0.0 && px.y >= 0.0 && px.x <= w as f64 && px.y <= h as f64,
            _ => px.x.is_finite() && px.y.is_finite(),
        }
    }

    fn distortion_factor(&self, r2: f64) -> f64 {
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Maps a normalized image point (x/z, y/z) to pixels.
    pub fn normalized_to_pixel(&self, n: &Vec2) -> Vec2 {
        let d = self.distortion_factor(n.norm_squared());
        Vec2::new(self.fx * n.x * d + self.cx, self.fy * n.y * d + self.cy)
    }

    /// Inverse of [`Self::normalized_to_pixel`]; distortion is removed by fixed-point iteration.
    pub fn pixel_to_normalized(&self, px: &Vec2) -> Vec2 {
        let distorted = Vec2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy);
        if !self.has_distortion() {
            return distorted;
        }
        let mut n = distorted;
        for _ in 0..50 {
            let next = distorted / self.distortion_factor(n.norm_squared());
            if (next - n).norm() < 1e-15 {
                return next;
            }
            n = next;
        }
        n
    }
}

/// Intrinsics plus a world→camera extrinsic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub extrinsic: RigidTransform,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, extrinsic: RigidTransform) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        Ok(Self { intrinsics, extrinsic })
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.extrinsic.rotation.transpose() * self.extrinsic.translation)
    }

    pub fn to_camera(&self, world: &Vec3) -> Vec3 {
        self.extrinsic.apply(world)
    }

    pub fn project(&self, world: &Vec3) -> Result<Vec2, GeometryError> {
        let pc = self.to_camera(world);
        if pc.z <= MIN_DEPTH {
            return Err(GeometryError::NonPositiveDepth { depth: pc.z });
        }
        Ok(self.intrinsics.normalized_to_pixel(&Vec2::new(pc.x / pc.z, pc.y / pc.z)))
    }

    /// Projection together with `∂pixel/∂world`.
    pub fn project_with_jacobian(&self, world: &Vec3) -> Result<(Vec2, Matrix2x3<f64>), GeometryError> {
        let pc = self.to_camera(world);
        let (px, d_cam) = self.project_camera_point(&pc)?;
        Ok((px, d_cam * self.extrinsic.rotation))
    }

    /// Projects a camera-frame point, returning `∂pixel/∂camera_point`.
    pub fn project_camera_point(&self, pc: &Vec3) -> Result<(Vec2, Matrix2x3<f64>), GeometryError> {
        if pc.z <= MIN_DEPTH {
            return Err(GeometryError::NonPositiveDepth { depth: pc.z });
        }
        let k = &self.intrinsics;
        let iz = 1.0 / pc.z;
        let x = pc.x * iz;
        let y = pc.y * iz;
        let r2 = x * x + y * y;
        let d = k.distortion_factor(r2);
        let dd_dr2 = k.k1 + 2.0 * k.k2 * r2;
        // ∂(x d, y d)/∂(x, y)
        let a11 = d + 2.0 * x * x * dd_dr2;
        let a12 = 2.0 * x * y * dd_dr2;
        let a22 = d + 2.0 * y * y * dd_dr2;
        // ∂(x, y)/∂(X, Y, Z)
        let n = Matrix2x3::new(iz, 0.0, -x * iz, 0.0, iz, -y * iz);
        let dist = nalgebra::Matrix2::new(k.fx * a11, k.fx * a12, k.fy * a12, k.fy * a22);
        let px = Vec2::new(k.fx * x * d + k.cx, k.fy * y * d + k.cy);
        Ok((px, dist * n))
    }

    /// Unit direction (world frame) of the ray through a pixel.
    pub fn ray_direction(&self, px: &Vec2) -> Vec3 {
        let n = self.intrinsics.pixel_to_normalized(px);
        let d_cam = Vec3::new(n.x, n.y, 1.0);
        (self.extrinsic.rotation.transpose() * d_cam).normalize()
    }

    /// A camera at `eye` looking at `target`, with image-up roughly along `up`.
    pub fn look_at(intrinsics: Intrinsics, eye: Vec3, target: Vec3, up: Vec3) -> Result<Self, GeometryError> {
        let z = (target - eye).normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(GeometryError::InvalidIntrinsics("look_at: up parallel to view direction".into()));
        }
        // image y points down, so the camera's y axis is -up projected
        let x = x.normalize();
        let y = z.cross(&x);
        let r = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * eye);
        CameraModel::new(intrinsics, RigidTransform::new(r, t)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel::new(Intrinsics::pinhole(1000.0, 1000.0, 500.0, 500.0), RigidTransform::identity()).unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let px = cam().project(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vec2::new(500.0, 500.0));
    }

    #[test]
    fn pinhole_formula() {
        let px = cam().project(&Vec3::new(0.1, 0.0, 1.0)).unwrap();
        assert!((px - Vec2::new(600.0, 500.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        assert!(matches!(
            cam().project(&Vec3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::NonPositiveDepth { .. })
        ));
        assert!(cam().project(&Vec3::new(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn non_positive_focal_rejected() {
        let k = Intrinsics::pinhole(0.0, 1000.0, 0.0, 0.0);
        assert!(CameraModel::new(k, RigidTransform::identity()).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences_with_distortion() {
        let mut k = Intrinsics::pinhole(900.0, 950.0, 320.0, 240.0);
        k.k1 = -0.2;
        k.k2 = 0.05;
        let ext = RigidTransform::from_axis_angle(&Vec3::new(0.1, -0.3, 0.2), Vec3::new(0.05, -0.1, 1.2));
        let c = CameraModel::new(k, ext).unwrap();
        let p = Vec3::new(0.1, 0.2, -0.05);
        let (_, j) = c.project_with_jacobian(&p).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut e = Vec3::zeros();
            e[i] = h;
            let fd = (c.project(&(p + e)).unwrap() - c.project(&(p - e)).unwrap()) / (2.0 * h);
            assert!((fd - j.column(i)).norm() < 1e-4 * j.column(i).norm().max(1.0));
        }
    }

    #[test]
    fn undistortion_inverts_distortion() {
        let mut k = Intrinsics::pinhole(900.0, 950.0, 320.0, 240.0);
        k.k1 = -0.2;
        k.k2 = 0.05;
        let n = Vec2::new(0.2, -0.15);
        let back = k.pixel_to_normalized(&k.normalized_to_pixel(&n));
        assert!((back - n).norm() < 1e-12);
    }

    #[test]
    fn look_at_centres_target() {
        let c = CameraModel::look_at(
            Intrinsics::pinhole(1000.0, 1000.0, 640.0, 480.0),
            Vec3::new(1.0, 0.5, 0.3),
            Vec3::zeros(),
            Vec3::z(),
        )
        .unwrap();
        let px = c.project(&Vec3::zeros()).unwrap();
        assert!((px - Vec2::new(640.0, 480.0)).norm() < 1e-9);
        assert!((c.center() - Vec3::new(1.0, 0.5, 0.3)).norm() < 1e-12);
        // world up maps to image up (decreasing v)
        let above = c.project(&Vec3::new(0.0, 0.0, 0.1)).unwrap();
        assert!(above.y < 480.0);
    }
}
