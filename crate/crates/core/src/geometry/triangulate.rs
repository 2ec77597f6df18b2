use nalgebra::Matrix3;

use super::camera::{CameraModel, Vec2};
use super::transform::Vec3;
use super::GeometryError;

/// Minimum baseline between two camera centres, in metres.
pub const MIN_BASELINE: f64 = 1e-6;
/// Minimum angle between two back-projected rays, in degrees.
pub const MIN_RAY_ANGLE_DEG: f64 = 0.1;

/// Midpoint of the common perpendicular of the two back-projected rays.
pub fn triangulate_pair(
    cam_a: &CameraModel,
    cam_b: &CameraModel,
    px_a: &Vec2,
    px_b: &Vec2,
) -> Result<Vec3, GeometryError> {
    let ca = cam_a.center();
    let cb = cam_b.center();
    let baseline = (cb - ca).norm();
    if baseline <= MIN_BASELINE {
        return Err(GeometryError::DegenerateBaseline { baseline });
    }
    let da = cam_a.ray_direction(px_a);
    let db = cam_b.ray_direction(px_b);
    let cos = da.dot(&db).clamp(-1.0, 1.0);
    let angle = cos.abs().acos().to_degrees();
    if angle < MIN_RAY_ANGLE_DEG {
        return Err(GeometryError::NearParallelRays { angle_deg: angle });
    }
    // minimise |ca + s da - cb - u db|²
    let w = ca - cb;
    let b = cos;
    let d = da.dot(&w);
    let e = db.dot(&w);
    let denom = 1.0 - b * b;
    let s = (b * e - d) / denom;
    let u = (e - b * d) / denom;
    Ok(0.5 * ((ca + s * da) + (cb + u * db)))
}

/// Least-squares point closest to all back-projected rays, refined by a few
/// Gauss-Newton steps on pixel reprojection error.
pub fn triangulate_views(views: &[(&CameraModel, Vec2)]) -> Result<Vec3, GeometryError> {
    if views.len() < 2 {
        return Err(GeometryError::TooFewPoints { needed: 2, got: views.len() });
    }
    let mut a = Matrix3::zeros();
    let mut rhs = Vec3::zeros();
    for (cam, px) in views {
        let d = cam.ray_direction(px);
        let p = Matrix3::identity() - d * d.transpose();
        a += p;
        rhs += p * cam.center();
    }
    let mut x = a
        .try_inverse()
        .ok_or(GeometryError::NearParallelRays { angle_deg: 0.0 })?
        * rhs;

    for _ in 0..5 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vec3::zeros();
        for (cam, px) in views {
            let Ok((proj, j)) = cam.project_with_jacobian(&x) else {
                continue;
            };
            let r = proj - px;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let Some(inv) = jtj.try_inverse() else { break };
        let step = inv * jtr;
        x -= step;
        if step.norm() < 1e-12 {
            break;
        }
    }
    Ok(x)
}
