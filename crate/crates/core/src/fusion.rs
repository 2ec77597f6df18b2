//! Multi-view fusion of 2D hand keypoints into 3D joints.
//!
//! Each joint is fused independently: candidate 3D points are triangulated
//! from pairs of views, scored by the number of views whose keypoint lies
//! within `radius_px` of the candidate's reprojection, and the best candidate
//! decides which views are valid for later fitting.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand::HandSide;
use crate::geometry::{triangulate_pair, triangulate_views, CameraModel, Vec2, Vec3};

pub const NUM_JOINTS: usize = 21;
pub const DEFAULT_RADIUS_PX: f64 = 30.0;
/// Rigs up to this many cameras enumerate every view pair (66 pairs for 12).
pub const EXHAUSTIVE_MAX_CAMERAS: usize = 12;

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum FusionError {
    #[error("joint observed in {present} view(s); need at least 2")]
    TooFewViews { present: usize },
    #[error("no candidate reached two inliers (best {best})")]
    NoConsensus { best: usize },
    #[error("observations cover {observed} views but {cameras} cameras were given")]
    ViewCountMismatch { observed: usize, cameras: usize },
    #[error("keypoint has invalid confidence {0}")]
    InvalidConfidence(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2D {
    pub pixel: [f64; 2],
    pub confidence: f64,
}

impl Keypoint2D {
    pub fn new(pixel: Vec2, confidence: f64) -> Self {
        Self { pixel: pixel.into(), confidence }
    }

    pub fn px(&self) -> Vec2 {
        Vec2::from(self.pixel)
    }
}

/// One hand's 2D keypoints in every camera, indexed `[camera][joint]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Keypoints2D {
    pub views: Vec<[Option<Keypoint2D>; NUM_JOINTS]>,
}

impl Keypoints2D {
    pub fn empty(cameras: usize) -> Self {
        Self { views: vec![[None; NUM_JOINTS]; cameras] }
    }

    pub fn get(&self, camera: usize, joint: usize) -> Option<&Keypoint2D> {
        self.views.get(camera).and_then(|v| v[joint].as_ref())
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        for kp in self.views.iter().flatten().flatten() {
            if !(0.0..=1.0).contains(&kp.confidence) {
                return Err(FusionError::InvalidConfidence(kp.confidence));
            }
            if !kp.pixel.iter().all(|v| v.is_finite()) {
                return Err(FusionError::InvalidConfidence(f64::NAN));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub radius_px: f64,
    /// Sampled pairs per joint for rigs larger than [`EXHAUSTIVE_MAX_CAMERAS`].
    pub iterations: usize,
    /// Re-triangulate from all inliers of the winning candidate; kept only if
    /// it does not lose inliers.
    pub refine: bool,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { radius_px: DEFAULT_RADIUS_PX, iterations: 200, refine: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedJoint {
    pub position: [f64; 3],
    /// Per camera: keypoint present and within the radius of the reprojection.
    pub valid: Vec<bool>,
    pub inlier_count: usize,
}

impl FusedJoint {
    pub fn point(&self) -> Vec3 {
        Vec3::from(self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedKeypoints3D {
    pub joints: Vec<Result<FusedJoint, FusionError>>,
}

impl FusedKeypoints3D {
    pub fn joint(&self, i: usize) -> Option<&FusedJoint> {
        self.joints.get(i).and_then(|j| j.as_ref().ok())
    }

    /// `valid_c[i]` for camera `c` and joint `i`; false for absent joints.
    pub fn is_valid(&self, camera: usize, joint: usize) -> bool {
        self.joint(joint).is_some_and(|j| j.valid.get(camera).copied().unwrap_or(false))
    }
}

/// `around_2D`: the keypoint lies strictly within `radius` pixels of the projection.
pub fn around_2d(camera: &CameraModel, point: &Vec3, keypoint: &Vec2, radius: f64) -> bool {
    camera.project(point).is_ok_and(|p| (p - keypoint).norm() < radius)
}

struct Candidate {
    point: Vec3,
    inliers: usize,
    confidence: f64,
}

fn score(cameras: &[CameraModel], obs: &Keypoints2D, joint: usize, point: Vec3, radius: f64) -> Candidate {
    let mut inliers = 0;
    let mut confidence = 0.0;
    for (c, cam) in cameras.iter().enumerate() {
        if let Some(kp) = obs.get(c, joint) {
            if around_2d(cam, &point, &kp.px(), radius) {
                inliers += 1;
                confidence += kp.confidence;
            }
        }
    }
    Candidate { point, inliers, confidence }
}

/// Camera pairs to evaluate: every pair of present views in lexicographic
/// order for small rigs, otherwise `iterations` seeded random pairs.
fn candidate_pairs(present: &[usize], cameras: usize, config: &FusionConfig, joint: usize) -> Vec<(usize, usize)> {
    if cameras <= EXHAUSTIVE_MAX_CAMERAS {
        let mut pairs = Vec::new();
        for (k, &a) in present.iter().enumerate() {
            for &b in &present[k + 1..] {
                pairs.push((a, b));
            }
        }
        return pairs;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(joint as u64);
    (0..config.iterations)
        .map(|_| {
            let idx = sample(&mut rng, present.len(), 2);
            (present[idx.index(0)], present[idx.index(1)])
        })
        .collect()
}

pub fn fuse_joint(
    cameras: &[CameraModel],
    obs: &Keypoints2D,
    joint: usize,
    config: &FusionConfig,
) -> Result<FusedJoint, FusionError> {
    if obs.views.len() != cameras.len() {
        return Err(FusionError::ViewCountMismatch { observed: obs.views.len(), cameras: cameras.len() });
    }
    let present: Vec<usize> = (0..cameras.len()).filter(|&c| obs.get(c, joint).is_some()).collect();
    if present.len() < 2 {
        return Err(FusionError::TooFewViews { present: present.len() });
    }

    let mut best: Option<Candidate> = None;
    for (a, b) in candidate_pairs(&present, cameras.len(), config, joint) {
        let (ka, kb) = (obs.get(a, joint).unwrap().px(), obs.get(b, joint).unwrap().px());
        let Ok(point) = triangulate_pair(&cameras[a], &cameras[b], &ka, &kb) else {
            continue;
        };
        let cand = score(cameras, obs, joint, point, config.radius_px);
        let better = match &best {
            None => true,
            Some(b) => cand.inliers > b.inliers || (cand.inliers == b.inliers && cand.confidence > b.confidence),
        };
        if better {
            best = Some(cand);
        }
    }
    let mut best = match best {
        Some(b) if b.inliers >= 2 => b,
        other => return Err(FusionError::NoConsensus { best: other.map_or(0, |b| b.inliers) }),
    };

    if config.refine {
        let views: Vec<(&CameraModel, Vec2)> = present
            .iter()
            .filter_map(|&c| {
                let kp = obs.get(c, joint)?.px();
                around_2d(&cameras[c], &best.point, &kp, config.radius_px).then_some((&cameras[c], kp))
            })
            .collect();
        if let Ok(point) = triangulate_views(&views) {
            let refined = score(cameras, obs, joint, point, config.radius_px);
            if refined.inliers >= best.inliers {
                best = refined;
            }
        }
    }

    let valid: Vec<bool> = (0..cameras.len())
        .map(|c| obs.get(c, joint).is_some_and(|kp| around_2d(&cameras[c], &best.point, &kp.px(), config.radius_px)))
        .collect();
    Ok(FusedJoint { position: best.point.into(), inlier_count: valid.iter().filter(|v| **v).count(), valid })
}

/// One line of the 2D keypoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointRecord {
    pub frame: usize,
    pub hand: HandSide,
    #[serde(flatten)]
    pub keypoints: Keypoints2D,
}

/// One line of the fused 3D keypoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedRecord {
    pub frame: usize,
    pub hand: HandSide,
    #[serde(flatten)]
    pub fused: FusedKeypoints3D,
}

/// Fuses all joints of one hand; failures are recorded per joint.
pub fn fuse_hand(cameras: &[CameraModel], obs: &Keypoints2D, config: &FusionConfig) -> FusedKeypoints3D {
    FusedKeypoints3D { joints: (0..NUM_JOINTS).map(|j| fuse_joint(cameras, obs, j, config)).collect() }
}
