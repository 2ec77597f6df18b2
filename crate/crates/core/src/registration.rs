//! Marker rig to object registration and per-frame object poses.
//!
//! A rig of surface markers is registered once to the scanned object mesh by
//! minimising a gated contact plus penetration energy. Per-frame object poses
//! then follow in closed form from the tracked marker positions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    rigid_align, so3_exp, GeometryError, IndexedMesh, Mat3, RigidTransform, Vec3,
};
use crate::optim::Adam;

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 5000;
pub const DEFAULT_REL_TOL: f64 = 1e-8;
/// Adam steps between recomputations of the active-marker mask.
pub const MASK_REFRESH: usize = 10;
/// Objective (m) treated as already optimal: round-off of exact placement.
const ABS_TOL: f64 = 1e-12;
/// Tracking residual above which a frame is flagged as mis-tracked.
pub const MAX_TRACKING_RMS: f64 = 5e-3;
pub const MARKER_RADIUS: f64 = 0.004;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("no marker lies within the contact gate at the initial transform")]
    NoActiveMarkers,
    #[error("{got} tracked marker(s) visible; need at least 3")]
    TooFewMarkers { got: usize },
    #[error("tracking residual {rms} m exceeds {limit} m")]
    HighResidual { rms: f64, limit: f64 },
    #[error("invalid marker rig: {0}")]
    InvalidRig(String),
    #[error("invalid registration setting: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Markers in rig-local coordinates. `tracked` indexes the markers followed
/// by the mocap system during capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerRig {
    pub marker_local: Vec<[f64; 3]>,
    pub tracked: Vec<usize>,
    #[serde(default = "default_marker_radius")]
    pub marker_radius: f64,
}

fn default_marker_radius() -> f64 {
    MARKER_RADIUS
}

impl MarkerRig {
    pub fn new(markers: Vec<Vec3>, tracked: Vec<usize>) -> Result<Self, RegistrationError> {
        let rig = Self { marker_local: markers.iter().map(|m| (*m).into()).collect(), tracked, marker_radius: MARKER_RADIUS };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<(), RegistrationError> {
        let k = self.marker_local.len();
        if k < 3 {
            return Err(RegistrationError::InvalidRig(format!("{k} markers; need at least 3")));
        }
        if self.tracked.len() < 3 {
            return Err(RegistrationError::InvalidRig(format!("{} tracked markers; need at least 3", self.tracked.len())));
        }
        if let Some(&i) = self.tracked.iter().find(|&&i| i >= k) {
            return Err(RegistrationError::InvalidRig(format!("tracked index {i} out of range")));
        }
        if !(self.marker_radius >= 0.0) {
            return Err(RegistrationError::InvalidRig("negative marker radius".into()));
        }
        if collinear(&self.markers()) {
            return Err(RegistrationError::InvalidRig("markers are collinear".into()));
        }
        Ok(())
    }

    pub fn markers(&self) -> Vec<Vec3> {
        self.marker_local.iter().map(|m| Vec3::from(*m)).collect()
    }
}

fn collinear(points: &[Vec3]) -> bool {
    let a = points[0];
    let Some(b) = points.iter().max_by(|p, q| (*p - a).norm().total_cmp(&(*q - a).norm())) else {
        return true;
    };
    let d = b - a;
    let len = d.norm();
    if len < 1e-9 {
        return true;
    }
    let dir = d / len;
    points.iter().all(|p| (p - a).cross(&dir).norm() < 1e-6)
}

/// Per-point closest-vertex terms with their gradients in the point.
#[derive(Debug, Clone, Copy)]
pub struct ClosestTerms {
    pub vertex: usize,
    pub contact: f64,
    pub penetration: f64,
    pub d_contact: Vec3,
    pub d_penetration: Vec3,
}

/// `L_c` and `L_p` at `q` against the nearest mesh vertex. The vertex index
/// is treated as locally constant for the gradients.
pub fn closest_terms(q: &Vec3, mesh: &IndexedMesh) -> Result<ClosestTerms, GeometryError> {
    let hit = mesh.index.nearest(q)?;
    let p = mesh.mesh.vertices()[hit.index];
    let n = mesh.mesh.normals()[hit.index];
    let d = q - p;
    let contact = hit.distance;
    let d_contact = if contact > 0.0 { d / contact } else { Vec3::zeros() };
    let depth = -n.dot(&d);
    let (penetration, d_penetration) = if depth > 0.0 { (depth, -n) } else { (0.0, Vec3::zeros()) };
    Ok(ClosestTerms { vertex: hit.index, contact, penetration, d_contact, d_penetration })
}

/// Distance from `q` to the nearest mesh vertex.
pub fn contact_loss(q: &Vec3, mesh: &IndexedMesh) -> Result<f64, GeometryError> {
    Ok(mesh.index.nearest(q)?.distance)
}

/// Depth of `q` behind the tangent plane of its nearest mesh vertex, or 0.
pub fn penetration_loss(q: &Vec3, mesh: &IndexedMesh) -> Result<f64, GeometryError> {
    Ok(closest_terms(q, mesh)?.penetration)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub alpha: f64,
    pub lr: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, lr: DEFAULT_LR, max_iter: DEFAULT_MAX_ITER, rel_tol: DEFAULT_REL_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Object model → rig.
    pub t_star: RigidTransform,
    pub contact: Vec<f64>,
    pub penetration: Vec<f64>,
    /// `contact < alpha` per marker at `t_star`.
    pub active: Vec<bool>,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Evaluation {
    terms: Vec<ClosestTerms>,
    points: Vec<Vec3>,
}

fn evaluate(markers: &[Vec3], rig_to_object: &RigidTransform, mesh: &IndexedMesh) -> Result<Evaluation, GeometryError> {
    let points: Vec<Vec3> = markers.iter().map(|q| rig_to_object.apply(q)).collect();
    let terms = points.iter().map(|x| closest_terms(x, mesh)).collect::<Result<_, _>>()?;
    Ok(Evaluation { terms, points })
}

fn gated_objective(terms: &[ClosestTerms], mask: &[bool]) -> f64 {
    terms.iter().zip(mask).filter(|(_, &m)| m).map(|(t, _)| t.contact + t.penetration).sum()
}

fn gate(terms: &[ClosestTerms], alpha: f64) -> Vec<bool> {
    terms.iter().map(|t| t.contact < alpha).collect()
}

/// Score used to pick the returned iterate: the objective under its own gate,
/// with each gated-out marker charged `alpha`.
fn selection_score(terms: &[ClosestTerms], alpha: f64) -> f64 {
    let mask = gate(terms, alpha);
    gated_objective(terms, &mask) + alpha * mask.iter().filter(|m| !**m).count() as f64
}

/// Registers `rig` to `mesh` by minimising `Σ_k [L_c < α] (L_c + L_p)` over
/// the rig → object transform with Adam. `t_init` and the returned `t_star`
/// map object-model coordinates into the rig frame.
pub fn register_rig(
    rig: &MarkerRig,
    mesh: &IndexedMesh,
    t_init: &RigidTransform,
    config: &RegistrationConfig,
) -> Result<RegistrationResult, RegistrationError> {
    rig.validate()?;
    if !(config.alpha > 0.0) || !(config.lr > 0.0) {
        return Err(RegistrationError::InvalidConfig(format!("alpha {} and lr {} must be positive", config.alpha, config.lr)));
    }
    let markers = rig.markers();
    let mut pose = t_init.inverse();
    let mut eval = evaluate(&markers, &pose, mesh)?;
    let mut mask = gate(&eval.terms, config.alpha);
    if !mask.iter().any(|&m| m) {
        return Err(RegistrationError::NoActiveMarkers);
    }
    let initial_objective = gated_objective(&eval.terms, &mask);
    let mut best = (selection_score(&eval.terms, config.alpha), pose, false);
    let mut adam = Adam::new(6, config.lr);
    // rotation increments are expressed as marker displacements (ω · radius)
    // so Adam's per-coordinate step moves markers equally in both blocks
    let lever = rig_radius(&markers);
    let mut previous = initial_objective;
    let mut iterations = 0;
    let mut converged = initial_objective <= ABS_TOL;

    while !converged && iterations < config.max_iter {
        if iterations > 0 && iterations % MASK_REFRESH == 0 {
            mask = gate(&eval.terms, config.alpha);
        }
        // rotation increment about the centroid of the active markers
        let active: Vec<usize> = (0..markers.len()).filter(|&k| mask[k]).collect();
        if active.is_empty() {
            break;
        }
        let pivot = active.iter().map(|&k| eval.points[k]).sum::<Vec3>() / active.len() as f64;
        let mut grad = [0.0; 6];
        for &k in &active {
            let g = eval.terms[k].d_contact + eval.terms[k].d_penetration;
            let gw = (eval.points[k] - pivot).cross(&g) / lever;
            for c in 0..3 {
                grad[c] += gw[c];
                grad[3 + c] += g[c];
            }
        }
        let step = adam.step(&grad);
        let dr: Mat3 = so3_exp(&(Vec3::new(step[0], step[1], step[2]) / lever));
        let dt = Vec3::new(step[3], step[4], step[5]);
        let rotation = dr * pose.rotation;
        let translation = dr * (pose.translation - pivot) + pivot + dt;
        pose = RigidTransform { rotation, translation }.orthonormalized();
        eval = evaluate(&markers, &pose, mesh)?;
        iterations += 1;

        let score = selection_score(&eval.terms, config.alpha);
        if score < best.0 {
            best = (score, pose, true);
        }
        let objective = gated_objective(&eval.terms, &mask);
        let change = (previous - objective).abs();
        converged = objective <= ABS_TOL || change <= config.rel_tol * previous.abs().max(f64::MIN_POSITIVE);
        previous = objective;
    }

    let (_, pose, improved) = best;
    let eval = evaluate(&markers, &pose, mesh)?;
    let active = gate(&eval.terms, config.alpha);
    Ok(RegistrationResult {
        t_star: if improved { pose.inverse() } else { *t_init },
        contact: eval.terms.iter().map(|t| t.contact).collect(),
        penetration: eval.terms.iter().map(|t| t.penetration).collect(),
        objective: gated_objective(&eval.terms, &active),
        active,
        initial_objective,
        iterations,
        converged,
    })
}

/// RMS distance of the markers from their centroid.
fn rig_radius(markers: &[Vec3]) -> f64 {
    let c = markers.iter().sum::<Vec3>() / markers.len() as f64;
    (markers.iter().map(|m| (m - c).norm_squared()).sum::<f64>() / markers.len() as f64).sqrt().max(1e-6)
}

/// One tracked marker in a mocap frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerObservation {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub visible: bool,
}

/// One line of a marker trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerFrame {
    pub frame: usize,
    pub markers: Vec<MarkerObservation>,
}

impl MarkerFrame {
    /// World positions of the rig's tracked markers, in `rig.tracked` order.
    pub fn tracked_positions(&self, rig: &MarkerRig) -> Vec<Option<Vec3>> {
        rig.tracked
            .iter()
            .map(|&id| {
                self.markers
                    .iter()
                    .find(|m| m.id == id && m.visible)
                    .map(|m| Vec3::new(m.x, m.y, m.z))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    /// Object model → world.
    pub pose: RigidTransform,
    pub rms: f64,
}

/// Object pose from the world positions of the tracked markers (in
/// `rig.tracked` order, `None` when occluded).
pub fn frame_object_pose(
    rig: &MarkerRig,
    t_star: &RigidTransform,
    tracked_world: &[Option<Vec3>],
) -> Result<ObjectPose, RegistrationError> {
    if tracked_world.len() != rig.tracked.len() {
        return Err(RegistrationError::InvalidRig(format!(
            "{} tracked positions for {} tracked markers",
            tracked_world.len(),
            rig.tracked.len()
        )));
    }
    let markers = rig.markers();
    let rig_to_object = t_star.inverse();
    let (source, target): (Vec<Vec3>, Vec<Vec3>) = rig
        .tracked
        .iter()
        .zip(tracked_world)
        .filter_map(|(&k, w)| w.map(|w| (rig_to_object.apply(&markers[k]), w)))
        .unzip();
    if source.len() < 3 {
        return Err(RegistrationError::TooFewMarkers { got: source.len() });
    }
    let sim = rigid_align(&source, &target, false)?;
    let rms = crate::geometry::alignment_rms(&source, &target, &sim);
    if rms > MAX_TRACKING_RMS {
        return Err(RegistrationError::HighResidual { rms, limit: MAX_TRACKING_RMS });
    }
    Ok(ObjectPose { pose: sim.transform, rms })
}
