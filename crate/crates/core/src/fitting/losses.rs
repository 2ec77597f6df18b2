//! The six hand-fitting energy terms with their analytic gradients.
//!
//! Joint and vertex terms return gradients with respect to the joints or
//! vertices they read; the chain rule into `{θ, t}` is the hand model's VJP.

use crate::fusion::{FusedKeypoints3D, Keypoints2D};
use crate::geometry::{CameraModel, IndexedMesh, Vec3};
use crate::hand::{HandPoseParams, NUM_ARTICULATION, NUM_POSE_PARAMS, NUM_THETA};

use super::FittingError;

/// Default gate of the attraction term, metres.
pub const DEFAULT_ATTRACTION_RADIUS: f64 = 0.01;

/// `valid[c][i]` for every camera and joint.
pub fn valid_flags(fused: &FusedKeypoints3D, cameras: usize) -> Vec<Vec<bool>> {
    (0..cameras).map(|c| (0..fused.joints.len()).map(|i| fused.is_valid(c, i)).collect()).collect()
}

pub fn loss_2d(joints: &[Vec3], cameras: &[CameraModel], obs: &Keypoints2D, valid: &[Vec<bool>]) -> f64 {
    loss_2d_grad(joints, cameras, obs, valid).0
}

/// Valid-gated squared reprojection error in pixels². Joints that cannot be
/// projected contribute nothing.
pub fn loss_2d_grad(joints: &[Vec3], cameras: &[CameraModel], obs: &Keypoints2D, valid: &[Vec<bool>]) -> (f64, Vec<Vec3>) {
    let mut grad = vec![Vec3::zeros(); joints.len()];
    let mut total = 0.0;
    for (c, cam) in cameras.iter().enumerate() {
        for (i, j) in joints.iter().enumerate() {
            if !valid.get(c).and_then(|v| v.get(i)).copied().unwrap_or(false) {
                continue;
            }
            let Some(kp) = obs.get(c, i) else { continue };
            let Ok((px, d)) = cam.project_with_jacobian(j) else { continue };
            let r = px - kp.px();
            total += r.norm_squared();
            grad[i] += 2.0 * d.transpose() * r;
        }
    }
    (total, grad)
}

pub fn loss_3d(joints: &[Vec3], fused: &FusedKeypoints3D) -> f64 {
    loss_3d_grad(joints, fused).0
}

/// Squared distance to the fused joints, m²; absent joints are skipped.
pub fn loss_3d_grad(joints: &[Vec3], fused: &FusedKeypoints3D) -> (f64, Vec<Vec3>) {
    let mut grad = vec![Vec3::zeros(); joints.len()];
    let mut total = 0.0;
    for (i, j) in joints.iter().enumerate() {
        if let Some(k) = fused.joint(i) {
            let r = j - k.point();
            total += r.norm_squared();
            grad[i] = 2.0 * r;
        }
    }
    (total, grad)
}

pub fn loss_angle(theta: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    loss_angle_grad(theta, lower, upper).0
}

/// One-sided hinge on the 45 articulation components; the global rotation is
/// exempt. The returned gradient covers all 48 entries of θ.
pub fn loss_angle_grad(theta: &[f64], lower: &[f64], upper: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; NUM_THETA];
    let mut total = 0.0;
    for i in 0..NUM_ARTICULATION {
        let x = theta[3 + i];
        if x < lower[i] {
            total += lower[i] - x;
            grad[3 + i] = -1.0;
        } else if x > upper[i] {
            total += x - upper[i];
            grad[3 + i] = 1.0;
        }
    }
    (total, grad)
}

pub fn loss_temporal(window: &[HandPoseParams]) -> Result<f64, FittingError> {
    let poses: Vec<Vec<f64>> = window.iter().map(|p| p.pose_vector()).collect();
    loss_temporal_grad(&poses).map(|(v, _)| v)
}

/// Translation velocity (frames i ≥ 1) plus θ acceleration (frames i ≥ 2)
/// over pose vectors `[θ, t]`. Returns one gradient per frame.
pub fn loss_temporal_grad(poses: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>), FittingError> {
    if poses.len() < 3 {
        return Err(FittingError::WindowTooShort { frames: poses.len() });
    }
    let mut grad = vec![vec![0.0; NUM_POSE_PARAMS]; poses.len()];
    let mut total = 0.0;
    for i in 1..poses.len() {
        for k in NUM_THETA..NUM_POSE_PARAMS {
            let d = poses[i][k] - poses[i - 1][k];
            total += d * d;
            grad[i][k] += 2.0 * d;
            grad[i - 1][k] -= 2.0 * d;
        }
        if i >= 2 {
            for k in 0..NUM_THETA {
                let a = poses[i][k] - 2.0 * poses[i - 1][k] + poses[i - 2][k];
                total += a * a;
                grad[i][k] += 2.0 * a;
                grad[i - 1][k] -= 4.0 * a;
                grad[i - 2][k] += 2.0 * a;
            }
        }
    }
    Ok((total, grad))
}

/// Per-frame share of the temporal term: the summand at index `i`.
pub fn temporal_terms(poses: &[Vec<f64>]) -> Vec<f64> {
    (0..poses.len())
        .map(|i| {
            if i == 0 {
                return 0.0;
            }
            let vel: f64 = (NUM_THETA..NUM_POSE_PARAMS).map(|k| (poses[i][k] - poses[i - 1][k]).powi(2)).sum();
            let acc: f64 = if i >= 2 {
                (0..NUM_THETA).map(|k| (poses[i][k] - 2.0 * poses[i - 1][k] + poses[i - 2][k]).powi(2)).sum()
            } else {
                0.0
            };
            vel + acc
        })
        .collect()
}

/// Nearest object vertex of each point, `None` for an empty mesh.
pub fn nearest_vertices(points: &[Vec3], mesh: &IndexedMesh) -> Option<Vec<usize>> {
    if mesh.index.is_empty() {
        return None;
    }
    Some(points.iter().map(|p| mesh.index.nearest(p).expect("non-empty index").index).collect())
}

pub fn loss_attraction(vertices: &[Vec3], mesh: &IndexedMesh, radius: f64) -> f64 {
    match nearest_vertices(vertices, mesh) {
        Some(nearest) => attraction_grad(vertices, mesh, &nearest, radius).0,
        None => 0.0,
    }
}

/// Squared distance to the nearest object vertex for hand vertices strictly
/// within `radius` of it. Correspondences are given and held fixed.
pub fn attraction_grad(vertices: &[Vec3], mesh: &IndexedMesh, nearest: &[usize], radius: f64) -> (f64, Vec<Vec3>) {
    let verts = mesh.mesh.vertices();
    let mut grad = vec![Vec3::zeros(); vertices.len()];
    let mut total = 0.0;
    for (i, (v, &k)) in vertices.iter().zip(nearest).enumerate() {
        let r = v - verts[k];
        let d2 = r.norm_squared();
        if d2 < radius * radius {
            total += d2;
            grad[i] = 2.0 * r;
        }
    }
    (total, grad)
}

pub fn loss_penetration(vertices: &[Vec3], mesh: &IndexedMesh) -> f64 {
    match nearest_vertices(vertices, mesh) {
        Some(nearest) => penetration_grad(vertices, mesh, &nearest).0,
        None => 0.0,
    }
}

/// Depth of hand vertices behind the tangent plane of their nearest object
/// vertex, summed in metres.
pub fn penetration_grad(vertices: &[Vec3], mesh: &IndexedMesh, nearest: &[usize]) -> (f64, Vec<Vec3>) {
    let verts = mesh.mesh.vertices();
    let normals = mesh.mesh.normals();
    let mut grad = vec![Vec3::zeros(); vertices.len()];
    let mut total = 0.0;
    for (i, (v, &k)) in vertices.iter().zip(nearest).enumerate() {
        let depth = -normals[k].dot(&(v - verts[k]));
        if depth > 0.0 {
            total += depth;
            grad[i] = -normals[k];
        }
    }
    (total, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{FusedJoint, Keypoint2D, NUM_JOINTS};
    use crate::geometry::{Intrinsics, TriMesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> CameraModel {
        CameraModel::look_at(
            Intrinsics::pinhole(1000.0, 1000.0, 640.0, 480.0).with_image_size(1280, 960),
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::zeros(),
            Vec3::y(),
        )
        .unwrap()
    }

    fn fused_at(points: &[Vec3], cameras: usize) -> FusedKeypoints3D {
        FusedKeypoints3D {
            joints: points
                .iter()
                .map(|p| Ok(FusedJoint { position: (*p).into(), valid: vec![true; cameras], inlier_count: cameras }))
                .collect(),
        }
    }

    fn joints(rng: &mut impl Rng) -> Vec<Vec3> {
        (0..NUM_JOINTS).map(|_| Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1))).collect()
    }

    #[test]
    fn loss_2d_examples() {
        let cam = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let j = joints(&mut rng);
        let mut obs = Keypoints2D::empty(1);
        for (i, p) in j.iter().enumerate() {
            obs.views[0][i] = Some(Keypoint2D::new(cam.project(p).unwrap(), 1.0));
        }
        let fused = fused_at(&j, 1);
        let valid = valid_flags(&fused, 1);
        assert!(loss_2d(&j, &[cam.clone()], &obs, &valid).abs() < 1e-18);
        let kp = obs.views[0][4].unwrap();
        obs.views[0][4] = Some(Keypoint2D::new(kp.px() + crate::geometry::Vec2::new(3.0, 0.0), 1.0));
        assert!((loss_2d(&j, &[cam.clone()], &obs, &valid) - 9.0).abs() < 1e-9);
        let none = vec![vec![false; NUM_JOINTS]];
        assert_eq!(loss_2d(&j, &[cam], &obs, &none), 0.0);
    }

    #[test]
    fn loss_3d_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = joints(&mut rng);
        let mut fused = fused_at(&j, 2);
        assert_eq!(loss_3d(&j, &fused), 0.0);
        let mut moved = j.clone();
        moved[3].x += 0.01;
        assert!((loss_3d(&moved, &fused) - 1e-4).abs() < 1e-15);
        fused.joints[3] = Err(crate::fusion::FusionError::TooFewViews { present: 1 });
        assert_eq!(loss_3d(&moved, &fused), 0.0);
    }

    #[test]
    fn loss_angle_examples() {
        let lo = vec![-1.0; NUM_ARTICULATION];
        let hi = vec![1.0; NUM_ARTICULATION];
        let mut theta = vec![0.5; NUM_THETA];
        theta[..3].fill(9.0);
        assert_eq!(loss_angle(&theta, &lo, &hi), 0.0);
        theta[10] = 1.2;
        assert!((loss_angle(&theta, &lo, &hi) - 0.2).abs() < 1e-12);
        theta[20] = -1.1;
        theta[10] = 1.3;
        assert!((loss_angle(&theta, &lo, &hi) - 0.4).abs() < 1e-12);
    }

    fn seq(f: impl Fn(usize) -> HandPoseParams, n: usize) -> Vec<HandPoseParams> {
        (0..n).map(f).collect()
    }

    #[test]
    fn loss_temporal_examples() {
        let p = HandPoseParams { theta: vec![0.3; NUM_THETA], beta: vec![0.0; 10], t: [0.1, 0.2, 0.3] };
        assert_eq!(loss_temporal(&seq(|_| p.clone(), 6)).unwrap(), 0.0);
        let linear = seq(|i| HandPoseParams { theta: vec![0.1 * i as f64; NUM_THETA], ..p.clone() }, 6);
        assert!(loss_temporal(&linear).unwrap() < 1e-24);
        let v = [0.01, -0.02, 0.005];
        let moving = seq(|i| HandPoseParams { t: v.map(|c| c * i as f64), ..p.clone() }, 7);
        let expected = 6.0 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        assert!((loss_temporal(&moving).unwrap() - expected).abs() < 1e-15);
        assert!(matches!(loss_temporal(&moving[..2]), Err(FittingError::WindowTooShort { frames: 2 })));
    }

    #[test]
    fn loss_temporal_ignores_constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let poses: Vec<Vec<f64>> = (0..8).map(|_| (0..NUM_POSE_PARAMS).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let shifted: Vec<Vec<f64>> = poses
            .iter()
            .map(|p| p.iter().enumerate().map(|(k, x)| if k >= NUM_THETA { x + 0.37 } else { *x }).collect())
            .collect();
        let a = loss_temporal_grad(&poses).unwrap().0;
        let b = loss_temporal_grad(&shifted).unwrap().0;
        assert!((a - b).abs() < 1e-12 * a);
        assert!((temporal_terms(&poses).iter().sum::<f64>() - a).abs() < 1e-12 * a);
    }

    #[test]
    fn attraction_examples() {
        let sphere = IndexedMesh::new(TriMesh::icosphere(Vec3::zeros(), 0.05, 3));
        let far = vec![Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(loss_attraction(&far, &sphere, 0.01), 0.0);
        let top = sphere.mesh.vertices()[0];
        let dir = top.normalize();
        let near = vec![top + dir * 0.005];
        assert!((loss_attraction(&near, &sphere, 0.01) - 2.5e-5).abs() < 1e-12);
        // exactly on the gate: dyadic coordinates keep the distance exact
        let cube = IndexedMesh::new(TriMesh::cube(Vec3::repeat(-0.0625), 0.125));
        let on_gate = vec![Vec3::new(0.0625 + 0.015625, 0.0625, 0.0625)];
        assert_eq!(loss_attraction(&on_gate, &cube, 0.015625), 0.0);
        assert!(loss_attraction(&on_gate, &cube, 0.015626) > 0.0);
    }

    #[test]
    fn penetration_examples() {
        let sphere = IndexedMesh::new(TriMesh::icosphere(Vec3::zeros(), 0.05, 4));
        let v = sphere.mesh.vertices()[7];
        let inside = vec![v - v.normalize() * 0.003];
        assert!((loss_penetration(&inside, &sphere) - 0.003).abs() < 1e-4);
        assert_eq!(loss_penetration(&[v], &sphere), 0.0);
        let outside = vec![v * 1.5, Vec3::new(0.0, 0.0, 0.2)];
        assert_eq!(loss_penetration(&outside, &sphere), 0.0);
    }

    fn fd_vertices(f: impl Fn(&[Vec3]) -> f64, x: &[Vec3], h: f64) -> Vec<Vec3> {
        let mut out = vec![Vec3::zeros(); x.len()];
        for i in 0..x.len() {
            for c in 0..3 {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i][c] += h;
                b[i][c] -= h;
                out[i][c] = (f(&a) - f(&b)) / (2.0 * h);
            }
        }
        out
    }

    fn rel_err(a: &[Vec3], b: &[Vec3]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum();
        let den: f64 = b.iter().map(|y| y.norm_squared()).sum();
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn joint_term_gradients() {
        let cams: Vec<CameraModel> = (0..3)
            .map(|k| {
                let a = k as f64 * 2.0;
                CameraModel::look_at(
                    Intrinsics::pinhole(900.0, 900.0, 640.0, 480.0),
                    Vec3::new(a.cos(), 0.3, a.sin()),
                    Vec3::zeros(),
                    Vec3::y(),
                )
                .unwrap()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let j = joints(&mut rng);
            let target = joints(&mut rng);
            let fused = fused_at(&target, 3);
            let mut obs = Keypoints2D::empty(3);
            for (c, cam) in cams.iter().enumerate() {
                for (i, p) in target.iter().enumerate() {
                    obs.views[c][i] = Some(Keypoint2D::new(cam.project(p).unwrap(), 1.0));
                }
            }
            let valid = valid_flags(&fused, 3);
            let g = loss_2d_grad(&j, &cams, &obs, &valid).1;
            let fd = fd_vertices(|x| loss_2d(x, &cams, &obs, &valid), &j, 1e-6);
            assert!(rel_err(&g, &fd) < 1e-4);
            let g = loss_3d_grad(&j, &fused).1;
            let fd = fd_vertices(|x| loss_3d(x, &fused), &j, 1e-6);
            assert!(rel_err(&g, &fd) < 1e-4);
        }
    }

    #[test]
    fn contact_term_gradients() {
        let sphere = IndexedMesh::new(TriMesh::icosphere(Vec3::zeros(), 0.05, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let pts: Vec<Vec3> = (0..50)
                .map(|_| {
                    let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
                    d * rng.random_range(0.04..0.058)
                })
                .collect();
            let nearest = nearest_vertices(&pts, &sphere).unwrap();
            let g = attraction_grad(&pts, &sphere, &nearest, 0.01).1;
            let fd = fd_vertices(|x| attraction_grad(x, &sphere, &nearest, 0.01).0, &pts, 1e-6);
            assert!(rel_err(&g, &fd) < 1e-4);
            let g = penetration_grad(&pts, &sphere, &nearest).1;
            let fd = fd_vertices(|x| penetration_grad(x, &sphere, &nearest).0, &pts, 1e-6);
            assert!(rel_err(&g, &fd) < 1e-4);
        }
    }

    #[test]
    fn temporal_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let poses: Vec<Vec<f64>> = (0..6).map(|_| (0..NUM_POSE_PARAMS).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let (_, g) = loss_temporal_grad(&poses).unwrap();
        let h = 1e-6;
        let mut num = 0.0;
        let mut den = 0.0;
        for f in 0..poses.len() {
            for k in 0..NUM_POSE_PARAMS {
                let mut a = poses.clone();
                let mut b = poses.clone();
                a[f][k] += h;
                b[f][k] -= h;
                let fd = (loss_temporal_grad(&a).unwrap().0 - loss_temporal_grad(&b).unwrap().0) / (2.0 * h);
                num += (g[f][k] - fd).powi(2);
                den += fd * fd;
            }
        }
        assert!((num / den).sqrt() < 1e-4);
    }
}
