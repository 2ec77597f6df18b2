use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix6, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};

use super::CalibError;
use crate::geometry::{project_to_so3, skew, so3_exp, CameraModel, Intrinsics, RigidTransform, Vec2, Vec3};

/// Point-to-plane distance (m) under which a marker set counts as coplanar.
pub const COPLANAR_TOL: f64 = 1e-3;

/// A mocap-measured marker and its annotated pixel in one camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationObservation {
    pub marker_world: [f64; 3],
    pub pixel: [f64; 2],
}

impl CalibrationObservation {
    pub fn new(marker_world: Vec3, pixel: Vec2) -> Self {
        Self { marker_world: marker_world.into(), pixel: pixel.into() }
    }

    pub fn world(&self) -> Vec3 {
        Vec3::from(self.marker_world)
    }

    pub fn px(&self) -> Vec2 {
        Vec2::from(self.pixel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicSolution {
    /// World → camera.
    pub extrinsic: RigidTransform,
    /// Mean reprojection error in pixels.
    pub mean_reprojection_error: f64,
    /// Root-mean-square reprojection error in pixels.
    pub rms_reprojection_error: f64,
}

/// Camera pose from ≥ 4 marker correspondences: linear initialisation
/// followed by Levenberg-Marquardt refinement of the reprojection error.
pub fn solve_extrinsic(
    intrinsics: &Intrinsics,
    observations: &[CalibrationObservation],
) -> Result<ExtrinsicSolution, CalibError> {
    intrinsics.validate()?;
    let n = observations.len();
    if n < 4 {
        return Err(CalibError::InsufficientObservations { got: n });
    }
    if let Some(o) = observations.iter().find(|o| !intrinsics.contains(&o.px())) {
        return Err(CalibError::PixelOutOfBounds { pixel: o.pixel });
    }
    let world: Vec<Vec3> = observations.iter().map(|o| o.world()).collect();
    let pixels: Vec<Vec2> = observations.iter().map(|o| o.px()).collect();
    let normalized: Vec<Vec2> = pixels.iter().map(|p| intrinsics.pixel_to_normalized(p)).collect();

    let shape = point_set_shape(&world);
    if shape.second_extent <= COPLANAR_TOL {
        return Err(CalibError::DegenerateConfiguration("markers are collinear".into()));
    }
    let planar = shape.plane_distance <= COPLANAR_TOL;
    if planar && n < 6 {
        return Err(CalibError::DegenerateConfiguration(format!(
            "{n} coplanar markers; need at least 6 when coplanar"
        )));
    }

    let mut candidates = Vec::new();
    if planar {
        candidates.extend(homography_init(&world, &normalized, &shape));
    } else if n >= 6 {
        candidates.extend(dlt_init(&world, &normalized));
    }
    if candidates.is_empty() {
        candidates.extend(multi_start_inits(&world, &normalized));
    }

    let camera = |ext: RigidTransform| CameraModel { intrinsics: *intrinsics, extrinsic: ext };
    let mut best: Option<(f64, RigidTransform)> = None;
    let consider = |init: RigidTransform, best: &mut Option<(f64, RigidTransform)>| {
        let refined = refine(&camera(init), &world, &pixels);
        if let Some((cost, ext)) = refined {
            if best.is_none_or(|(c, _)| cost < c) {
                *best = Some((cost, ext));
            }
        }
    };
    for init in candidates {
        consider(init, &mut best);
    }
    // a linear start that lands in a poor basin falls back to the multi-start set
    let good = |best: &Option<(f64, RigidTransform)>| best.is_some_and(|(c, _)| (c / n as f64).sqrt() < 5.0);
    if !good(&best) {
        for init in multi_start_inits(&world, &normalized) {
            consider(init, &mut best);
        }
    }
    let (_, extrinsic) = best.ok_or_else(|| CalibError::DegenerateConfiguration("no valid pose found".into()))?;
    let cam = camera(extrinsic);
    let errors: Vec<f64> = world
        .iter()
        .zip(&pixels)
        .map(|(w, p)| cam.project(w).map(|q| (q - p).norm()).unwrap_or(f64::INFINITY))
        .collect();
    let mean = errors.iter().sum::<f64>() / n as f64;
    let rms = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    Ok(ExtrinsicSolution { extrinsic, mean_reprojection_error: mean, rms_reprojection_error: rms })
}

struct Shape {
    centroid: Vec3,
    /// Principal axes, largest variance first.
    axes: [Vec3; 3],
    /// Max distance from the best-fit plane.
    plane_distance: f64,
    /// Max extent along the second principal axis.
    second_extent: f64,
}

fn point_set_shape(points: &[Vec3]) -> Shape {
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes = order.map(|i| Vec3::from(eig.eigenvectors.column(i)));
    let plane_distance = points.iter().map(|p| (p - centroid).dot(&axes[2]).abs()).fold(0.0, f64::max);
    let second_extent = points.iter().map(|p| (p - centroid).dot(&axes[1]).abs()).fold(0.0, f64::max);
    Shape { centroid, axes, plane_distance, second_extent }
}

/// Similarity normalisation of 2D points: centroid to origin, mean distance √2.
fn normalize_2d(points: &[Vec2]) -> (Matrix3<f64>, Vec<Vec2>) {
    let c = points.iter().sum::<Vec2>() / points.len() as f64;
    let mean = points.iter().map(|p| (p - c).norm()).sum::<f64>() / points.len() as f64;
    let s = if mean > 0.0 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    let t = Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0);
    (t, points.iter().map(|p| (p - c) * s).collect())
}

/// Null vector of `a` (right singular vector of the smallest singular value).
fn null_vector(a: &DMatrix<f64>) -> Option<nalgebra::DVector<f64>> {
    let ata = a.transpose() * a;
    let eig = SymmetricEigen::new(ata);
    let i = eig.eigenvalues.imin();
    Some(eig.eigenvectors.column(i).into_owned())
}

fn dlt_init(world: &[Vec3], normalized: &[Vec2]) -> Option<RigidTransform> {
    let n = world.len();
    let (t2, xs) = normalize_2d(normalized);
    let c = world.iter().sum::<Vec3>() / n as f64;
    let mean = world.iter().map(|p| (p - c).norm()).sum::<f64>() / n as f64;
    let s = 3f64.sqrt() / mean;
    let mut t3 = nalgebra::Matrix4::identity() * s;
    t3[(3, 3)] = 1.0;
    t3.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-s * c));

    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, (p, x)) in world.iter().zip(&xs).enumerate() {
        let q = (p - c) * s;
        let h = [q.x, q.y, q.z, 1.0];
        for k in 0..4 {
            a[(2 * i, k)] = h[k];
            a[(2 * i, 8 + k)] = -x.x * h[k];
            a[(2 * i + 1, 4 + k)] = h[k];
            a[(2 * i + 1, 8 + k)] = -x.y * h[k];
        }
    }
    let v = null_vector(&a)?;
    let pn = Matrix3x4::from_row_slice(v.as_slice());
    let mut p = t2.try_inverse()? * pn * t3;
    let mut m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    let svd = m.svd(false, false);
    let scale = svd.singular_values.mean();
    if !(scale > 0.0) {
        return None;
    }
    let rotation = project_to_so3(&m);
    let translation = Vec3::from(p.column(3)) / scale;
    Some(RigidTransform { rotation, translation })
}

fn homography_init(world: &[Vec3], normalized: &[Vec2], shape: &Shape) -> Option<RigidTransform> {
    let [e1, e2, _] = shape.axes;
    let plane: Vec<Vec2> = world
        .iter()
        .map(|p| {
            let d = p - shape.centroid;
            Vec2::new(d.dot(&e1), d.dot(&e2))
        })
        .collect();
    let (ta, a_pts) = normalize_2d(&plane);
    let (tb, b_pts) = normalize_2d(normalized);
    let n = world.len();
    let mut a = DMatrix::zeros(2 * n, 9);
    for (i, (p, x)) in a_pts.iter().zip(&b_pts).enumerate() {
        let h = [p.x, p.y, 1.0];
        for k in 0..3 {
            a[(2 * i, k)] = h[k];
            a[(2 * i, 6 + k)] = -x.x * h[k];
            a[(2 * i + 1, 3 + k)] = h[k];
            a[(2 * i + 1, 6 + k)] = -x.y * h[k];
        }
    }
    let v = null_vector(&a)?;
    let hn = Matrix3::from_row_slice(v.as_slice());
    let mut h = tb.try_inverse()? * hn * ta;
    let lambda = 0.5 * (h.column(0).norm() + h.column(1).norm());
    if !(lambda > 0.0) {
        return None;
    }
    h /= lambda;
    if h[(2, 2)] < 0.0 {
        h = -h;
    }
    let r1: Vec3 = h.column(0).into();
    let r2: Vec3 = h.column(1).into();
    let q = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let basis = Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]);
    let rotation = project_to_so3(&q) * basis.transpose();
    let t_centroid: Vec3 = h.column(2).into();
    Some(RigidTransform { rotation, translation: t_centroid - rotation * shape.centroid })
}

/// Rotations of the cube group combined with a translation that places the
/// marker centroid on its observed viewing ray at a depth matching the
/// observed spread.
fn multi_start_inits(world: &[Vec3], normalized: &[Vec2]) -> Vec<RigidTransform> {
    let n = world.len() as f64;
    let c3 = world.iter().sum::<Vec3>() / n;
    let c2 = normalized.iter().sum::<Vec2>() / n;
    let spread3 = (world.iter().map(|p| (p - c3).norm_squared()).sum::<f64>() / n).sqrt();
    let spread2 = (normalized.iter().map(|p| (p - c2).norm_squared()).sum::<f64>() / n).sqrt();
    let depth = if spread2 > 1e-12 { spread3 / spread2 } else { 1.0 };
    let ray = Vec3::new(c2.x, c2.y, 1.0);
    let mut out = Vec::new();
    for perm in [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]] {
        for signs in 0..8 {
            let mut r = Matrix3::zeros();
            for (row, &col) in perm.iter().enumerate() {
                r[(row, col)] = if signs & (1 << row) != 0 { -1.0 } else { 1.0 };
            }
            if r.determinant() < 0.0 {
                continue;
            }
            out.push(RigidTransform { rotation: r, translation: ray * depth - r * c3 });
        }
    }
    out
}

fn reprojection_cost(cam: &CameraModel, world: &[Vec3], pixels: &[Vec2]) -> Option<f64> {
    let mut cost = 0.0;
    for (w, p) in world.iter().zip(pixels) {
        cost += (cam.project(w).ok()? - p).norm_squared();
    }
    Some(cost)
}

/// Levenberg-Marquardt over a left-multiplied rotation increment and a
/// translation increment. Returns the final squared-error cost.
fn refine(init: &CameraModel, world: &[Vec3], pixels: &[Vec2]) -> Option<(f64, RigidTransform)> {
    let mut cam = *init;
    let mut cost = reprojection_cost(&cam, world, pixels)?;
    let mut mu = 1e-3;
    for _ in 0..200 {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for (w, p) in world.iter().zip(pixels) {
            let rw = cam.extrinsic.rotation * w;
            let pc = rw + cam.extrinsic.translation;
            let (proj, d_cam) = cam.project_camera_point(&pc).ok()?;
            let r = proj - p;
            let mut j = nalgebra::Matrix2x6::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_cam * -skew(&rw)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_cam);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-9);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
                mu *= 10.0;
                continue;
            };
            let dw = Vec3::new(step[0], step[1], step[2]);
            let dt = Vec3::new(step[3], step[4], step[5]);
            let candidate = CameraModel {
                intrinsics: cam.intrinsics,
                extrinsic: RigidTransform {
                    rotation: so3_exp(&dw) * cam.extrinsic.rotation,
                    translation: cam.extrinsic.translation + dt,
                }
                .orthonormalized(),
            };
            match reprojection_cost(&candidate, world, pixels) {
                Some(c) if c <= cost => {
                    let converged = cost - c <= 1e-15 * cost.max(1e-30) || step.norm() < 1e-14;
                    cam = candidate;
                    cost = c;
                    mu = (mu / 3.0).max(1e-12);
                    improved = !converged;
                    break;
                }
                _ => mu *= 5.0,
            }
        }
        if !improved {
            break;
        }
    }
    Some((cost, cam.extrinsic))
}
