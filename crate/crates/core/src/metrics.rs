//! Evaluation metrics for hand and object estimates and generated grasps.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    rigid_align, rotation_angle, voxel_intersection_volume, GeometryError, IndexedMesh, RigidTransform, TriMesh, Vec3,
};

/// Contact is declared below this hand-object vertex distance, metres.
pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.002;
/// Edge of the voxels used for interpenetration volume, metres.
pub const DEFAULT_VOXEL: f64 = 0.001;
pub const DEFAULT_FPS: f64 = 30.0;
/// Ridge added to feature covariances before the matrix square root.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least {needed} frames, got {got}")]
    WindowTooShort { needed: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("covariance is degenerate after regularisation")]
    DegenerateCovariance,
    #[error("{path}:{line}: {message}")]
    FeatureParse { path: String, line: usize, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn check_skeletons(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<(), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} predicted frames, {} ground-truth frames", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if let Some(f) = (0..pred.len()).find(|&f| pred[f].len() != gt[f].len() || pred[f].is_empty()) {
        return Err(MetricsError::ShapeMismatch(format!(
            "frame {f}: {} predicted joints, {} ground-truth joints",
            pred[f].len(),
            gt[f].len()
        )));
    }
    Ok(())
}

fn mean_distance_mm<'a>(pairs: impl Iterator<Item = (&'a Vec3, Vec3)>) -> f64 {
    let (sum, n) = pairs.fold((0.0, 0usize), |(s, n), (p, g)| (s + (p - g).norm(), n + 1));
    1000.0 * sum / n as f64
}

/// Mean per-joint position error in millimetres. Frames are `[frame][joint]`.
pub fn mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64, MetricsError> {
    check_skeletons(pred, gt)?;
    Ok(mean_distance_mm(pred.iter().zip(gt).flat_map(|(p, g)| p.iter().zip(g.iter().copied()))))
}

/// MPJPE after per-frame similarity alignment of `pred` onto `gt`.
pub fn pa_mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64, MetricsError> {
    check_skeletons(pred, gt)?;
    let mut aligned = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gt) {
        let sim = rigid_align(p, g, true)?;
        aligned.push(p.iter().map(|x| sim.apply(x)).collect::<Vec<_>>());
    }
    mpjpe(&aligned, gt)
}

fn check_poses(pred: &[RigidTransform], gt: &[RigidTransform]) -> Result<(), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} predicted poses, {} ground-truth poses", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

/// Mean translation distance in millimetres.
pub fn translation_error(pred: &[RigidTransform], gt: &[RigidTransform]) -> Result<f64, MetricsError> {
    check_poses(pred, gt)?;
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p.translation - g.translation).norm()).sum();
    Ok(1000.0 * sum / pred.len() as f64)
}

/// Mean geodesic rotation angle in degrees.
pub fn rotation_error(pred: &[RigidTransform], gt: &[RigidTransform]) -> Result<f64, MetricsError> {
    check_poses(pred, gt)?;
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| rotation_angle(&(p.rotation.transpose() * g.rotation))).sum();
    Ok((sum / pred.len() as f64).to_degrees())
}

/// Mean norm of the difference of second finite differences, scaled to
/// m/s² by `fps`.
pub fn acceleration_error(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], fps: f64) -> Result<f64, MetricsError> {
    if pred.len() < 3 {
        return Err(MetricsError::WindowTooShort { needed: 3, got: pred.len() });
    }
    check_skeletons(pred, gt)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for f in 1..pred.len() - 1 {
        for j in 0..pred[f].len() {
            let acc = |s: &[Vec<Vec3>]| s[f + 1][j] - 2.0 * s[f][j] + s[f - 1][j];
            sum += (acc(pred) - acc(gt)).norm();
            n += 1;
        }
    }
    Ok(sum / n as f64 * fps * fps)
}

/// Distance from each vertex of `a` to the nearest vertex of `b`.
pub fn interaction_field(a: &[Vec3], b: &IndexedMesh) -> Result<Vec<f64>, MetricsError> {
    a.iter().map(|v| Ok(b.index.nearest(v)?.distance)).collect()
}

/// Jointly occupied volume of two closed meshes, cm³.
pub fn penetration_volume(hand: &TriMesh, object: &TriMesh, voxel: f64) -> Result<f64, MetricsError> {
    Ok(voxel_intersection_volume(hand, object, voxel)?)
}

pub struct ContactSample<'a> {
    pub hand: &'a TriMesh,
    pub object: &'a IndexedMesh,
}

/// Percentage of samples whose hand comes within `threshold` metres of the
/// object's vertices or overlaps its volume.
pub fn contact_ratio(samples: &[ContactSample], threshold: f64, voxel: f64) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut hits = 0;
    for s in samples {
        let field = interaction_field(s.hand.vertices(), s.object)?;
        let near = field.iter().any(|d| *d < threshold);
        if near || penetration_volume(s.hand, &s.object.mesh, voxel)? > 0.0 {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / samples.len() as f64)
}

pub struct CollisionSample<'a> {
    pub hand: &'a TriMesh,
    pub environment: Vec<&'a TriMesh>,
}

/// Percentage of samples whose hand overlaps any environment mesh.
pub fn collision_ratio(samples: &[CollisionSample], voxel: f64) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut hits = 0;
    for s in samples {
        let mut collided = false;
        for env in &s.environment {
            if penetration_volume(s.hand, env, voxel)? > 0.0 {
                collided = true;
                break;
            }
        }
        hits += collided as usize;
    }
    Ok(100.0 * hits as f64 / samples.len() as f64)
}

/// Feature vectors, one row per sample.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureSet {
    pub rows: Vec<Vec<f64>>,
}

impl FeatureSet {
    /// Reads comma-separated rows; blank lines and lines starting with `#`
    /// are skipped.
    pub fn read_csv(path: &Path) -> Result<FeatureSet, MetricsError> {
        let parse_err = |line: usize, message: String| MetricsError::FeatureParse { path: path.display().to_string(), line, message };
        let text = std::fs::read_to_string(path).map_err(|e| parse_err(0, e.to_string()))?;
        let mut rows: Vec<Vec<f64>> = vec![];
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .enumerate()
                .map(|(k, v)| v.trim().parse::<f64>().map_err(|e| parse_err(i + 1, format!("field {}: {e}", k + 1))))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(parse_err(i + 1, format!("{} fields, expected {}", row.len(), first.len())));
                }
            }
            rows.push(row);
        }
        Ok(FeatureSet { rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    fn moments(&self) -> Result<(DVector<f64>, DMatrix<f64>), MetricsError> {
        let n = self.rows.len();
        if n < 2 {
            return Err(MetricsError::ShapeMismatch(format!("{n} feature rows; need at least 2")));
        }
        let d = self.dim();
        let mean = self.rows.iter().fold(DVector::zeros(d), |acc, r| acc + DVector::from_column_slice(r)) / n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for r in &self.rows {
            let x = DVector::from_column_slice(r) - &mean;
            cov.ger(1.0, &x, &x, 1.0);
        }
        cov /= (n - 1) as f64;
        Ok((mean, cov))
    }
}

fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0).ok_or(MetricsError::DegenerateCovariance)?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::DegenerateCovariance);
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Fréchet distance between Gaussian fits of two feature sets:
/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`.
pub fn frechet_distance(a: &FeatureSet, b: &FeatureSet) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() || a.dim() == 0 {
        return Err(MetricsError::ShapeMismatch(format!("feature dimensions {} and {}", a.dim(), b.dim())));
    }
    let (mu_a, mut cov_a) = a.moments()?;
    let (mu_b, mut cov_b) = b.moments()?;
    let ridge = DMatrix::identity(a.dim(), a.dim()) * COVARIANCE_RIDGE;
    cov_a += &ridge;
    cov_b += &ridge;
    let s = sqrt_psd(&cov_a)?;
    let mut inner = &s * &cov_b * &s;
    // symmetrise round-off before the eigen decomposition
    inner = (&inner + inner.transpose()) * 0.5;
    let cross = sqrt_psd(&inner)?.trace();
    let d = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(MetricsError::DegenerateCovariance);
    }
    Ok(d.max(0.0))
}
