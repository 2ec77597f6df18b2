//! Two-stage hand pose fitting over a sequence.
//!
//! Stage 1 fits keypoints under the angle prior and temporal smoothing.
//! Stage 2 continues from it with hand-object attraction and penetration
//! against the posed object mesh. Both run Adam over sliding windows of
//! frames; overlapping frames are blended linearly between windows.

mod losses;

pub use losses::*;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{FusedKeypoints3D, Keypoints2D};
use crate::geometry::{rigid_align, so3_log, CameraModel, IndexedMesh, RigidTransform, Vec3};
use crate::hand::{HandError, HandModel, HandPoseParams, Shaped, NUM_POSE_PARAMS, NUM_THETA};
use crate::optim::Adam;

#[derive(Debug, Error)]
pub enum FittingError {
    #[error("temporal window has {frames} frame(s); need at least 3")]
    WindowTooShort { frames: usize },
    #[error("objective is not finite in the window starting at frame {frame}")]
    NonFiniteLoss { frame: usize },
    #[error("invalid fitting weights: {0}")]
    InvalidWeights(String),
    #[error("input shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Hand(#[from] HandError),
}

/// Term weights and optimiser schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FittingWeights {
    pub lambda_2d: f64,
    pub lambda_3d: f64,
    pub lambda_angle: f64,
    pub lambda_tc: f64,
    pub lambda_a: f64,
    pub lambda_p: f64,
    /// Gate of the attraction term, metres.
    pub attraction_radius: f64,
    pub lr: f64,
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    pub window: usize,
    pub overlap: usize,
}

impl Default for FittingWeights {
    fn default() -> Self {
        Self {
            lambda_2d: 1e-4,
            lambda_3d: 1.0,
            lambda_angle: 10.0,
            lambda_tc: 1.0,
            lambda_a: 1.0,
            lambda_p: 10.0,
            attraction_radius: DEFAULT_ATTRACTION_RADIUS,
            lr: 1e-3,
            stage1_iterations: 300,
            stage2_iterations: 200,
            window: 10,
            overlap: 5,
        }
    }
}

impl FittingWeights {
    pub fn validate(&self) -> Result<(), FittingError> {
        let lambdas = [self.lambda_2d, self.lambda_3d, self.lambda_angle, self.lambda_tc, self.lambda_a, self.lambda_p];
        if !lambdas.iter().all(|l| l.is_finite() && *l >= 0.0) {
            return Err(FittingError::InvalidWeights(format!("weights must be finite and non-negative: {lambdas:?}")));
        }
        if !(self.attraction_radius > 0.0 && self.attraction_radius.is_finite()) {
            return Err(FittingError::InvalidWeights(format!("attraction radius {} must be positive", self.attraction_radius)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FittingError::InvalidWeights(format!("learning rate {} must be positive", self.lr)));
        }
        if self.window < 3 || self.overlap >= self.window {
            return Err(FittingError::InvalidWeights(format!(
                "window {} must be at least 3 and larger than overlap {}",
                self.window, self.overlap
            )));
        }
        Ok(())
    }
}

/// One hand's observations in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandObservation {
    pub keypoints: Keypoints2D,
    pub fused: FusedKeypoints3D,
}

/// Object the hand interacts with: mesh in its own frame and its per-frame
/// pose (object → world).
#[derive(Debug, Clone, Copy)]
pub struct ContactTrack<'a> {
    pub mesh: &'a IndexedMesh,
    pub poses: &'a [Option<RigidTransform>],
}

pub struct HandTrackInput<'a> {
    pub model: &'a HandModel,
    pub beta: Vec<f64>,
    pub observations: &'a [Option<HandObservation>],
    pub contact: Option<ContactTrack<'a>>,
    /// Starting pose; the rest pose when absent. Its global rotation and
    /// translation are re-estimated from the fused joints when possible.
    pub init: Option<HandPoseParams>,
}

/// Unweighted term values for one frame and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l2d: f64,
    pub l3d: f64,
    pub angle: f64,
    pub temporal: f64,
    pub attraction: f64,
    pub penetration: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageStats {
    pub initial: f64,
    #[serde(rename = "final")]
    pub best: f64,
    pub iterations: usize,
    /// The objective became non-finite and the stage stopped early.
    pub aborted: bool,
    /// Unweighted penetration summed over the window, at the start and at
    /// the returned iterate. Zero when the term is off.
    pub initial_penetration: f64,
    pub final_penetration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDiagnostics {
    pub start: usize,
    pub frames: usize,
    /// False when the window was too short for the temporal term.
    pub temporal: bool,
    pub stage1: StageStats,
    pub stage2: StageStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandFit {
    pub params: Vec<HandPoseParams>,
    pub losses: Vec<LossBreakdown>,
    pub windows: Vec<WindowDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HandLosses {
    pub left: Option<LossBreakdown>,
    pub right: Option<LossBreakdown>,
}

/// One record of the serialised fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFit {
    pub frame: usize,
    pub left: Option<HandPoseParams>,
    pub right: Option<HandPoseParams>,
    pub losses: HandLosses,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub left: Vec<WindowDiagnostics>,
    pub right: Vec<WindowDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SequenceFit {
    pub frames: Vec<FrameFit>,
    pub diagnostics: FitDiagnostics,
}

/// Window layout `(start, len)`: full windows stepping by `window − overlap`,
/// the last one aligned to the sequence end.
pub fn windows(frames: usize, window: usize, overlap: usize) -> Vec<(usize, usize)> {
    if frames <= window {
        return vec![(0, frames)];
    }
    let step = window - overlap;
    let mut out = vec![];
    let mut start = 0;
    loop {
        if start + window >= frames {
            out.push((frames - window, window));
            return out;
        }
        out.push((start, window));
        start += step;
    }
}

struct Problem<'a> {
    cameras: &'a [CameraModel],
    model: &'a HandModel,
    shaped: Shaped,
    observations: &'a [Option<HandObservation>],
    valid: Vec<Option<Vec<Vec<bool>>>>,
    contact: Option<ContactTrack<'a>>,
    weights: &'a FittingWeights,
}

struct WindowEval {
    total: f64,
    grad: Vec<f64>,
    penetration: f64,
}

struct FrameEval {
    losses: LossBreakdown,
    grad: [f64; NUM_POSE_PARAMS],
}

impl Problem<'_> {
    fn contact_at(&self, frame: usize) -> Option<(&IndexedMesh, &RigidTransform)> {
        let c = self.contact.as_ref()?;
        Some((c.mesh, c.poses.get(frame)?.as_ref()?))
    }

    /// Per-frame terms (all but temporal), weighted gradient included.
    fn frame(&self, frame: usize, pose: &[f64], stage2: bool) -> FrameEval {
        let w = self.weights;
        let theta = &pose[..NUM_THETA];
        let t = Vec3::new(pose[NUM_THETA], pose[NUM_THETA + 1], pose[NUM_THETA + 2]);
        let posed = self.model.pose(&self.shaped, theta, t);
        let mut l = LossBreakdown::default();
        let mut g_joints = vec![Vec3::zeros(); posed.joints.len()];
        if let (Some(obs), Some(valid)) = (&self.observations[frame], &self.valid[frame]) {
            if w.lambda_2d > 0.0 {
                let (v, g) = loss_2d_grad(&posed.joints, self.cameras, &obs.keypoints, valid);
                l.l2d = v;
                g_joints.iter_mut().zip(&g).for_each(|(a, b)| *a += w.lambda_2d * b);
            }
            if w.lambda_3d > 0.0 {
                let (v, g) = loss_3d_grad(&posed.joints, &obs.fused);
                l.l3d = v;
                g_joints.iter_mut().zip(&g).for_each(|(a, b)| *a += w.lambda_3d * b);
            }
        }
        let mut g_vertices = None;
        if stage2 && (w.lambda_a > 0.0 || w.lambda_p > 0.0) {
            if let Some((mesh, pose)) = self.contact_at(frame) {
                // work in the object frame; rotate gradients back to world
                let rt = pose.rotation.transpose();
                let local: Vec<Vec3> = posed.vertices.iter().map(|v| rt * (v - pose.translation)).collect();
                if let Some(nearest) = nearest_vertices(&local, mesh) {
                    let mut g = vec![Vec3::zeros(); local.len()];
                    if w.lambda_a > 0.0 {
                        let (v, ga) = attraction_grad(&local, mesh, &nearest, w.attraction_radius);
                        l.attraction = v;
                        g.iter_mut().zip(&ga).for_each(|(a, b)| *a += w.lambda_a * (pose.rotation * b));
                    }
                    if w.lambda_p > 0.0 {
                        let (v, gp) = penetration_grad(&local, mesh, &nearest);
                        l.penetration = v;
                        g.iter_mut().zip(&gp).for_each(|(a, b)| *a += w.lambda_p * (pose.rotation * b));
                    }
                    g_vertices = Some(g);
                }
            }
        }
        let mut grad = self.model.vjp(&self.shaped, &posed, Some(&g_joints), g_vertices.as_deref());
        if w.lambda_angle > 0.0 {
            let (lower, upper) = self.model.bounds();
            let (v, g) = loss_angle_grad(theta, lower, upper);
            l.angle = v;
            grad[..NUM_THETA].iter_mut().zip(&g).for_each(|(a, b)| *a += w.lambda_angle * b);
        }
        l.total = w.lambda_2d * l.l2d
            + w.lambda_3d * l.l3d
            + w.lambda_angle * l.angle
            + w.lambda_a * l.attraction
            + w.lambda_p * l.penetration;
        FrameEval { losses: l, grad }
    }

    /// Window objective over the flattened pose vectors of frames
    /// `start..start + x.len() / 51`.
    fn window(&self, start: usize, x: &[f64], stage2: bool, temporal: bool) -> WindowEval {
        let frames = x.len() / NUM_POSE_PARAMS;
        let mut grad = vec![0.0; x.len()];
        let mut total = 0.0;
        let mut penetration = 0.0;
        for k in 0..frames {
            let slot = k * NUM_POSE_PARAMS..(k + 1) * NUM_POSE_PARAMS;
            let e = self.frame(start + k, &x[slot.clone()], stage2);
            total += e.losses.total;
            penetration += e.losses.penetration;
            grad[slot].copy_from_slice(&e.grad);
        }
        if temporal && self.weights.lambda_tc > 0.0 {
            let poses: Vec<Vec<f64>> = x.chunks(NUM_POSE_PARAMS).map(|c| c.to_vec()).collect();
            let (v, g) = loss_temporal_grad(&poses).expect("temporal windows have at least 3 frames");
            total += self.weights.lambda_tc * v;
            for (k, gk) in g.iter().enumerate() {
                for (a, b) in grad[k * NUM_POSE_PARAMS..].iter_mut().zip(gk) {
                    *a += self.weights.lambda_tc * b;
                }
            }
        }
        WindowEval { total, grad, penetration }
    }

    /// Adam from `x`, returning the best visited iterate.
    fn stage(
        &self,
        start: usize,
        mut x: Vec<f64>,
        iterations: usize,
        stage2: bool,
        temporal: bool,
    ) -> Result<(Vec<f64>, StageStats), FittingError> {
        let e0 = self.window(start, &x, stage2, temporal);
        let (f0, mut g) = (e0.total, e0.grad);
        if !f0.is_finite() {
            return Err(FittingError::NonFiniteLoss { frame: start });
        }
        let mut stats = StageStats {
            initial: f0,
            best: f0,
            iterations: 0,
            aborted: false,
            initial_penetration: e0.penetration,
            final_penetration: e0.penetration,
        };
        let mut best = x.clone();
        let mut adam = Adam::new(x.len(), self.weights.lr);
        for _ in 0..iterations {
            let step = adam.step(&g);
            x.iter_mut().zip(&step).for_each(|(a, d)| *a += d);
            stats.iterations += 1;
            let e = self.window(start, &x, stage2, temporal);
            if !e.total.is_finite() || e.grad.iter().any(|v| !v.is_finite()) {
                stats.aborted = true;
                break;
            }
            if e.total < stats.best {
                stats.best = e.total;
                stats.final_penetration = e.penetration;
                best.copy_from_slice(&x);
            }
            g = e.grad;
        }
        Ok((best, stats))
    }

    /// Keeps the articulation of `prev` and re-estimates the global rotation
    /// and translation from the fused joints of `frame`.
    fn initial_pose(&self, frame: usize, prev: &[f64]) -> Vec<f64> {
        let mut pose = prev.to_vec();
        let Some(obs) = &self.observations[frame] else { return pose };
        let mut local = pose.clone();
        local[..3].fill(0.0);
        local[NUM_THETA..].fill(0.0);
        let posed = self.model.pose(&self.shaped, &local[..NUM_THETA], Vec3::zeros());
        let (src, dst): (Vec<Vec3>, Vec<Vec3>) =
            (0..posed.joints.len()).filter_map(|i| obs.fused.joint(i).map(|k| (posed.joints[i], k.point()))).unzip();
        let Ok(sim) = rigid_align(&src, &dst, false) else { return pose };
        let r = sim.transform.rotation;
        let root = self.shaped.joints[0];
        let t = sim.transform.translation + r * root - root;
        pose[..3].copy_from_slice(so3_log(&r).as_slice());
        pose[NUM_THETA..].copy_from_slice(t.as_slice());
        pose
    }
}

/// Fits one hand over a sequence.
pub fn fit_hand(cameras: &[CameraModel], input: &HandTrackInput, weights: &FittingWeights) -> Result<HandFit, FittingError> {
    weights.validate()?;
    let n = input.observations.len();
    if let Some(c) = &input.contact {
        if c.poses.len() != n {
            return Err(FittingError::ShapeMismatch(format!("{} object poses for {n} frames", c.poses.len())));
        }
    }
    let init = input.init.clone().unwrap_or_else(|| HandPoseParams { beta: input.beta.clone(), ..Default::default() });
    HandPoseParams { beta: input.beta.clone(), ..init.clone() }.validate()?;
    for obs in input.observations.iter().flatten() {
        if obs.keypoints.views.len() != cameras.len() {
            return Err(FittingError::ShapeMismatch(format!(
                "keypoints cover {} cameras, rig has {}",
                obs.keypoints.views.len(),
                cameras.len()
            )));
        }
    }
    let problem = Problem {
        cameras,
        model: input.model,
        shaped: input.model.shape(&input.beta),
        observations: input.observations,
        valid: input.observations.iter().map(|o| o.as_ref().map(|o| valid_flags(&o.fused, cameras.len()))).collect(),
        contact: input.contact,
        weights,
    };
    if n == 0 {
        return Ok(HandFit { params: vec![], losses: vec![], windows: vec![] });
    }

    let mut estimates: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut diagnostics = vec![];
    let mut prev = init.pose_vector();
    for (start, len) in windows(n, weights.window, weights.overlap) {
        // shorter sequences fall back to independent frames
        let temporal = len >= 3;
        let mut x = Vec::with_capacity(len * NUM_POSE_PARAMS);
        for f in start..start + len {
            let pose = match &estimates[f] {
                Some(p) => p.clone(),
                None => problem.initial_pose(f, &prev),
            };
            x.extend_from_slice(&pose);
            prev = pose;
        }
        let (x1, stage1) = problem.stage(start, x, weights.stage1_iterations, false, temporal)?;
        let (x2, stage2) = problem.stage(start, x1, weights.stage2_iterations, true, temporal)?;
        let blended: Vec<usize> = (start..start + len).filter(|&f| estimates[f].is_some()).collect();
        for (k, f) in (start..start + len).enumerate() {
            let new = &x2[k * NUM_POSE_PARAMS..(k + 1) * NUM_POSE_PARAMS];
            estimates[f] = Some(match (&estimates[f], blended.iter().position(|&b| b == f)) {
                (Some(old), Some(i)) => {
                    let a = (i + 1) as f64 / (blended.len() + 1) as f64;
                    old.iter().zip(new).map(|(o, v)| (1.0 - a) * o + a * v).collect()
                }
                _ => new.to_vec(),
            });
        }
        prev = estimates[start + len - 1].clone().expect("window frames are estimated");
        diagnostics.push(WindowDiagnostics { start, frames: len, temporal, stage1, stage2 });
    }

    let poses: Vec<Vec<f64>> = estimates.into_iter().map(|p| p.expect("every frame is covered by a window")).collect();
    let temporal = if n >= 3 { temporal_terms(&poses) } else { vec![0.0; n] };
    let losses = poses
        .iter()
        .enumerate()
        .map(|(f, pose)| {
            let mut l = problem.frame(f, pose, true).losses;
            l.temporal = temporal[f];
            l.total += weights.lambda_tc * l.temporal;
            l
        })
        .collect();
    let params = poses.iter().map(|p| HandPoseParams { beta: input.beta.clone(), ..HandPoseParams::default() }.with_pose_vector(p)).collect();
    Ok(HandFit { params, losses, windows: diagnostics })
}

/// Fits both hands. Frame `k` of the result carries `frame_ids[k]`.
pub fn fit_sequence(
    cameras: &[CameraModel],
    frame_ids: &[usize],
    left: Option<&HandTrackInput>,
    right: Option<&HandTrackInput>,
    weights: &FittingWeights,
) -> Result<SequenceFit, FittingError> {
    for input in left.iter().chain(right.iter()) {
        if input.observations.len() != frame_ids.len() {
            return Err(FittingError::ShapeMismatch(format!(
                "{} observation frames for {} frame ids",
                input.observations.len(),
                frame_ids.len()
            )));
        }
    }
    let left = left.map(|i| fit_hand(cameras, i, weights)).transpose()?;
    let right = right.map(|i| fit_hand(cameras, i, weights)).transpose()?;
    Ok(assemble(frame_ids, left, right))
}

/// Joins per-hand fits into per-frame records.
pub fn assemble(frame_ids: &[usize], left: Option<HandFit>, right: Option<HandFit>) -> SequenceFit {
    let frames = frame_ids
        .iter()
        .enumerate()
        .map(|(k, &frame)| FrameFit {
            frame,
            left: left.as_ref().map(|h| h.params[k].clone()),
            right: right.as_ref().map(|h| h.params[k].clone()),
            losses: HandLosses { left: left.as_ref().map(|h| h.losses[k]), right: right.as_ref().map(|h| h.losses[k]) },
        })
        .collect();
    let diagnostics = FitDiagnostics {
        left: left.map(|h| h.windows).unwrap_or_default(),
        right: right.map(|h| h.windows).unwrap_or_default(),
    };
    SequenceFit { frames, diagnostics }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_layout() {
        assert_eq!(windows(2, 10, 5), vec![(0, 2)]);
        assert_eq!(windows(10, 10, 5), vec![(0, 10)]);
        assert_eq!(windows(20, 10, 5), vec![(0, 10), (5, 10), (10, 10)]);
        assert_eq!(windows(22, 10, 5), vec![(0, 10), (5, 10), (10, 10), (12, 10)]);
        for n in 1..60 {
            let w = windows(n, 10, 5);
            assert_eq!(w[0].0, 0);
            assert_eq!(w.last().map(|(s, l)| s + l), Some(n));
            assert!(w.windows(2).all(|p| p[1].0 > p[0].0 && p[1].0 <= p[0].0 + p[0].1));
        }
    }

    #[test]
    fn weights_validation() {
        assert!(FittingWeights::default().validate().is_ok());
        assert!(FittingWeights { lambda_p: -1.0, ..Default::default() }.validate().is_err());
        assert!(FittingWeights { attraction_radius: 0.0, ..Default::default() }.validate().is_err());
        assert!(FittingWeights { overlap: 10, ..Default::default() }.validate().is_err());
    }
}
