use nalgebra::Matrix3;

use super::transform::{RigidTransform, Vec3};
use super::GeometryError;

/// Relative size of the second singular value of the centred source below
/// which the source is considered collinear.
const RANK_TOL: f64 = 1e-10;

/// Result of [`rigid_align`]: `target ≈ scale · R · source + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub transform: RigidTransform,
    pub scale: f64,
}

impl Similarity {
    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.transform.rotation * p) + self.transform.translation
    }
}

/// Least-squares similarity (or rigid, when `with_scale` is false) alignment of
/// corresponding point sets (Umeyama).
pub fn rigid_align(source: &[Vec3], target: &[Vec3], with_scale: bool) -> Result<Similarity, GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::LengthMismatch { left: source.len(), right: target.len() });
    }
    let n = source.len();
    if n < 3 {
        return Err(GeometryError::TooFewPoints { needed: 3, got: n });
    }
    if !source.iter().chain(target).all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(GeometryError::NonFinite);
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = source.iter().sum::<Vec3>() * inv_n;
    let mu_t = target.iter().sum::<Vec3>() * inv_n;

    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mu_s;
        let dt = t - mu_t;
        cov += dt * ds.transpose();
        scatter += ds * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov *= inv_n;
    var_s *= inv_n;

    let sv = scatter.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] <= 0.0 || sv[1] <= RANK_TOL * sv[0] {
        return Err(GeometryError::RankDeficient);
    }

    let svd = cov.svd(true, true);
    let u = svd.u.ok_or(GeometryError::RankDeficient)?;
    let vt = svd.v_t.ok_or(GeometryError::RankDeficient)?;
    let mut d = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * vt;
    let scale = if with_scale {
        let trace_ds: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
        trace_ds / var_s
    } else {
        1.0
    };
    let translation = mu_t - scale * (rotation * mu_s);
    Ok(Similarity { transform: RigidTransform { rotation, translation }, scale })
}

/// Root-mean-square residual of `target - similarity(source)`.
pub fn alignment_rms(source: &[Vec3], target: &[Vec3], sim: &Similarity) -> f64 {
    let sum: f64 = source.iter().zip(target).map(|(s, t)| (sim.apply(s) - t).norm_squared()).sum();
    (sum / source.len().max(1) as f64).sqrt()
}
