//! Synthetic scenes with exact ground truth.
//!
//! A scene is a ring of cameras around two hands, each holding a rigid
//! object in front of its palm. Hand motion interpolates random or scripted
//! keyframes with smoothstep easing and the held object follows the hand's
//! global motion. Clean data and corruption draw from separate random
//! streams, so changing the noise settings never changes the clean data.

use std::f64::consts::{PI, TAU};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{CalibrationObservation, TimestampRecord};
use crate::fitting::SequenceFit;
use crate::fusion::{Keypoint2D, KeypointRecord, Keypoints2D};
use crate::geometry::{so3_exp, CameraModel, GeometryError, IndexedMesh, Intrinsics, RigidTransform, TriMesh, Vec3};
use crate::hand::{HandError, HandModel, HandPoseParams, HandSide, MIN_SYNTHETIC_VERTICES, NUM_BETAS, NUM_THETA};
use crate::io::{write_json, write_jsonl, IoError};
use crate::metrics::{
    acceleration_error, contact_ratio, mpjpe, pa_mpjpe, penetration_volume, rotation_error, translation_error,
    ContactSample, MetricsError, DEFAULT_CONTACT_THRESHOLD, DEFAULT_VOXEL,
};
use crate::registration::{MarkerFrame, MarkerObservation, MarkerRig, RegistrationError};

pub const CAMERA_SENSOR: &str = "cameras";
pub const MOCAP_SENSOR: &str = "mocap";

const STREAM_HANDS: u64 = 0;
const STREAM_OBJECTS: u64 = 1;
const STREAM_CALIBRATION: u64 = 2;
const STREAM_KEYPOINT_NOISE: u64 = 10;
const STREAM_MARKER_NOISE: u64 = 11;
const STREAM_CALIBRATION_NOISE: u64 = 12;
const STREAM_TIMESTAMP_NOISE: u64 = 13;

const GRIP_BISECTIONS: usize = 40;
/// Height of the held object's centre above the wrist, along the fingers.
const GRIP_HEIGHT: f64 = 0.045;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Hand(#[from] HandError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidSpec(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    pub fps: f64,
    /// Hands that are observed and fitted. Both hands always move so that
    /// the objects they hold do too.
    pub hands: Vec<HandSide>,
    pub hand_vertices: usize,
    pub cameras: CameraRigSpec,
    pub objects: Vec<ObjectSpec>,
    pub motion: MotionSpec,
    pub noise: NoiseSpec,
    pub mocap: MocapSpec,
    /// Calibration wand positions shared by all cameras.
    pub calibration_points: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 50,
            fps: 30.0,
            hands: vec![HandSide::Left, HandSide::Right],
            hand_vertices: 778,
            cameras: CameraRigSpec::default(),
            objects: vec![
                ObjectSpec::new(
                    "tool",
                    ObjectShape::Ellipsoid { semi_axes: [0.03, 0.045, 0.02], subdivisions: 4 },
                    HandSide::Right,
                ),
                ObjectSpec::new(
                    "target",
                    ObjectShape::Cuboid { half_extents: [0.035, 0.04, 0.025], cells: 12 },
                    HandSide::Left,
                ),
            ],
            motion: MotionSpec::default(),
            noise: NoiseSpec::default(),
            mocap: MocapSpec::default(),
            calibration_points: 30,
        }
    }
}

/// Cameras on a horizontal ring, alternating between the given heights and
/// looking at `target` with +y up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRigSpec {
    pub count: usize,
    pub radius: f64,
    pub heights: Vec<f64>,
    pub target: [f64; 3],
    pub focal_px: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraRigSpec {
    fn default() -> Self {
        Self {
            count: 12,
            radius: 1.2,
            heights: vec![0.3, 0.9],
            target: [0.0, 0.05, 0.0],
            focal_px: 1000.0,
            width: 1280,
            height: 960,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectShape {
    Ellipsoid { semi_axes: [f64; 3], subdivisions: usize },
    Cuboid { half_extents: [f64; 3], cells: usize },
    Mesh { path: PathBuf },
}

impl ObjectShape {
    pub fn build(&self) -> Result<TriMesh, SynthError> {
        Ok(match self {
            ObjectShape::Ellipsoid { semi_axes, subdivisions } => {
                TriMesh::ellipsoid(Vec3::zeros(), Vec3::from(*semi_axes), *subdivisions)
            }
            ObjectShape::Cuboid { half_extents, cells } => TriMesh::cuboid(Vec3::zeros(), Vec3::from(*half_extents), *cells),
            ObjectShape::Mesh { path } => TriMesh::load(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub shape: ObjectShape,
    /// Hand the object is rigidly attached to.
    pub holder: HandSide,
    /// Clearance between the palm surface and the object, metres. Negative
    /// values plant an interpenetration of that depth.
    #[serde(default = "default_gap")]
    pub gap: f64,
    #[serde(default = "default_markers")]
    pub markers: usize,
    /// Markers followed by the mocap system; all of them when absent.
    #[serde(default)]
    pub tracked: Option<Vec<usize>>,
    /// Random surface vertices from which markers are picked by farthest
    /// point sampling.
    #[serde(default = "default_marker_candidates")]
    pub marker_candidates: usize,
}

fn default_gap() -> f64 {
    0.012
}

fn default_markers() -> usize {
    6
}

fn default_marker_candidates() -> usize {
    400
}

impl ObjectSpec {
    pub fn new(name: &str, shape: ObjectShape, holder: HandSide) -> Self {
        Self {
            name: name.into(),
            shape,
            holder,
            gap: default_gap(),
            markers: default_markers(),
            tracked: None,
            marker_candidates: default_marker_candidates(),
        }
    }
}

/// Random keyframes every `keyframe_interval` frames, unless a hand has
/// scripted `keyframes`, in which case only those are used for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionSpec {
    pub keyframe_interval: usize,
    /// Finger joint amplitude, radians.
    pub articulation_rad: f64,
    /// Per-component amplitude of the global rotation, radians.
    pub global_rotation_rad: f64,
    /// Per-axis amplitude of the wrist translation, metres.
    pub translation_m: f64,
    /// Distance between the two hands' base positions, metres.
    pub hand_spacing_m: f64,
    pub keyframes: Vec<Keyframe>,
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            keyframe_interval: 10,
            articulation_rad: 0.25,
            global_rotation_rad: 0.3,
            translation_m: 0.04,
            hand_spacing_m: 0.3,
            keyframes: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: usize,
    pub hand: HandSide,
    /// Parameters in the hand's own model convention.
    pub params: HandPoseParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub keypoint_sigma_px: f64,
    /// Fraction of keypoints replaced by uniform pixels.
    pub outlier_rate: f64,
    /// Per-axis standard deviation of marker positions, millimetres.
    pub marker_jitter_mm: f64,
    /// Probability that a marker is reported occluded in a mocap frame.
    pub marker_dropout: f64,
    pub calibration_sigma_px: f64,
    /// Mocap timestamps move by a uniform integer in ±this many ms.
    pub timestamp_jitter_ms: i64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            keypoint_sigma_px: 2.0,
            outlier_rate: 0.0,
            marker_jitter_mm: 0.0,
            marker_dropout: 0.0,
            calibration_sigma_px: 0.2,
            timestamp_jitter_ms: 1,
        }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            keypoint_sigma_px: 0.0,
            outlier_rate: 0.0,
            marker_jitter_mm: 0.0,
            marker_dropout: 0.0,
            calibration_sigma_px: 0.0,
            timestamp_jitter_ms: 0,
        }
    }
}

/// The mocap stream runs at the camera rate but starts `frame_offset`
/// frames earlier and `time_offset_ms` out of phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MocapSpec {
    pub frame_offset: usize,
    pub time_offset_ms: i64,
    pub start_utc_ms: i64,
    /// Perturbation of the rig-to-object initialisation.
    pub init_rotation_deg: f64,
    pub init_translation_mm: f64,
}

impl Default for MocapSpec {
    fn default() -> Self {
        Self { frame_offset: 7, time_offset_ms: 4, start_utc_ms: 1_700_000_000_000, init_rotation_deg: 5.0, init_translation_mm: 5.0 }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let c = &self.cameras;
        if c.count < 2 {
            return Err(invalid(format!("{} camera(s); need at least 2", c.count)));
        }
        if c.heights.is_empty() || !(c.radius > 0.0 && c.focal_px > 0.0) || c.width == 0 || c.height == 0 {
            return Err(invalid("camera ring needs heights, a positive radius, focal length and image size"));
        }
        if self.frames == 0 {
            return Err(invalid("scene has no frames"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(invalid(format!("fps must be positive, got {}", self.fps)));
        }
        if self.hand_vertices < MIN_SYNTHETIC_VERTICES {
            return Err(invalid(format!("hand needs at least {MIN_SYNTHETIC_VERTICES} vertices")));
        }
        let n = &self.noise;
        for (name, v) in [
            ("keypoint_sigma_px", n.keypoint_sigma_px),
            ("outlier_rate", n.outlier_rate),
            ("marker_jitter_mm", n.marker_jitter_mm),
            ("marker_dropout", n.marker_dropout),
            ("calibration_sigma_px", n.calibration_sigma_px),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("noise {name} must be a finite value >= 0, got {v}")));
            }
        }
        if n.outlier_rate > 1.0 || n.marker_dropout > 1.0 {
            return Err(invalid("rates must not exceed 1"));
        }
        let period = 1000.0 / self.fps;
        if n.timestamp_jitter_ms < 0 || (2 * n.timestamp_jitter_ms + 1) as f64 >= period {
            return Err(invalid("timestamp jitter must be >= 0 and keep the stream increasing"));
        }
        let m = &self.motion;
        if m.keyframe_interval == 0 {
            return Err(invalid("keyframe interval must be at least 1"));
        }
        for k in &m.keyframes {
            k.params.validate().map_err(|e| invalid(format!("keyframe {}: {e}", k.frame)))?;
            if k.frame >= self.frames {
                return Err(invalid(format!("keyframe {} lies past the last frame", k.frame)));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for o in &self.objects {
            let safe = !o.name.is_empty() && o.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-');
            if !safe || !names.insert(&o.name) {
                return Err(invalid(format!("object name {:?} is empty, not a plain identifier or repeated", o.name)));
            }
            if o.markers < 3 || o.marker_candidates < o.markers {
                return Err(invalid(format!("object {} needs at least 3 markers and enough candidates", o.name)));
            }
            if !o.gap.is_finite() {
                return Err(invalid(format!("object {} has a non-finite gap", o.name)));
            }
        }
        if self.calibration_points < 6 {
            return Err(invalid("need at least 6 calibration points"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandTruth {
    pub side: HandSide,
    /// Per-frame parameters in this hand's model convention.
    pub params: Vec<HandPoseParams>,
    pub joints: Vec<Vec<Vec3>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub name: String,
    pub holder: HandSide,
    /// Object model → rig.
    pub t_star: RigidTransform,
    /// Object model → world, one per camera frame.
    pub poses: Vec<RigidTransform>,
}

/// The serialisable part of the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub fps: f64,
    pub frame_ids: Vec<usize>,
    /// Mocap frame recorded together with camera frame `f` is `f + offset`.
    pub mocap_frame_offset: usize,
    pub cameras: Vec<CameraModel>,
    pub hands: Vec<HandTruth>,
    pub objects: Vec<ObjectTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInputs {
    pub name: String,
    pub rig: MarkerRig,
    /// Rough object model → rig transform used to start registration.
    pub t_init: RigidTransform,
    pub markers: Vec<MarkerFrame>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Betas {
    pub left: Option<Vec<f64>>,
    pub right: Option<Vec<f64>>,
}

impl Betas {
    pub fn get(&self, side: HandSide) -> Option<&Vec<f64>> {
        match side {
            HandSide::Left => self.left.as_ref(),
            HandSide::Right => self.right.as_ref(),
        }
    }
}

/// Everything the pipeline reads, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInputs {
    pub intrinsics: Vec<Intrinsics>,
    /// Per camera: wand positions and their pixels.
    pub calibration: Vec<Vec<CalibrationObservation>>,
    pub timestamps: Vec<TimestampRecord>,
    pub keypoints: Vec<KeypointRecord>,
    pub objects: Vec<ObjectInputs>,
    pub betas: Betas,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBundle {
    pub spec: SceneSpec,
    /// Right-hand model; the left hand uses its mirror image.
    pub model: HandModel,
    pub meshes: Vec<TriMesh>,
    pub truth: GroundTruth,
    pub clean: SceneInputs,
    pub observed: SceneInputs,
}

/// File layout of a generated scene.
#[derive(Debug, Clone)]
pub struct SceneLayout {
    pub root: PathBuf,
}

impl SceneLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn intrinsics(&self) -> PathBuf {
        self.root.join("cameras/intrinsics.json")
    }

    pub fn calibration(&self) -> PathBuf {
        self.root.join("cameras/calibration.json")
    }

    pub fn timestamps(&self) -> PathBuf {
        self.root.join("timestamps.jsonl")
    }

    pub fn keypoints(&self) -> PathBuf {
        self.root.join("keypoints.jsonl")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("hand/model.bin")
    }

    pub fn betas(&self) -> PathBuf {
        self.root.join("hand/betas.json")
    }

    pub fn object_dir(&self, name: &str) -> PathBuf {
        self.root.join("objects").join(name)
    }

    pub fn mesh(&self, name: &str) -> PathBuf {
        self.object_dir(name).join("mesh.obj")
    }

    pub fn rig(&self, name: &str) -> PathBuf {
        self.object_dir(name).join("rig.json")
    }

    pub fn init(&self, name: &str) -> PathBuf {
        self.object_dir(name).join("init.json")
    }

    pub fn markers(&self, name: &str) -> PathBuf {
        self.object_dir(name).join("markers.jsonl")
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("ground_truth.json")
    }

    pub fn spec(&self) -> PathBuf {
        self.root.join("scene.json")
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn symmetric(rng: &mut impl Rng, amplitude: f64) -> f64 {
    if amplitude > 0.0 {
        rng.random_range(-amplitude..=amplitude)
    } else {
        0.0
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(gaussian(rng), gaussian(rng), gaussian(rng));
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

pub fn camera_rig(spec: &CameraRigSpec) -> Result<Vec<CameraModel>, SynthError> {
    let intr = Intrinsics::pinhole(spec.focal_px, spec.focal_px, spec.width as f64 / 2.0, spec.height as f64 / 2.0)
        .with_image_size(spec.width, spec.height);
    (0..spec.count)
        .map(|i| {
            let a = TAU * i as f64 / spec.count as f64;
            let h = spec.heights[i % spec.heights.len()];
            let eye = Vec3::new(spec.radius * a.cos(), h, spec.radius * a.sin());
            Ok(CameraModel::look_at(intr, eye, Vec3::from(spec.target), Vec3::y())?)
        })
        .collect()
}

/// Random right-hand keyframe around `base`. Fingers bend mostly away from
/// the palm so they stay clear of the held object.
fn random_keyframe(rng: &mut impl Rng, motion: &MotionSpec, base: Vec3) -> HandPoseParams {
    let mut theta = vec![0.0; NUM_THETA];
    for v in &mut theta[..3] {
        *v = symmetric(rng, motion.global_rotation_rad);
    }
    let a = motion.articulation_rad;
    for j in 1..NUM_THETA / 3 {
        theta[3 * j] = if a > 0.0 { rng.random_range(-0.2 * a..=a) } else { 0.0 };
        theta[3 * j + 1] = symmetric(rng, 0.3 * a);
        theta[3 * j + 2] = symmetric(rng, 0.3 * a);
    }
    let t = [0, 1, 2].map(|i| base[i] + symmetric(rng, motion.translation_m));
    HandPoseParams { theta, beta: vec![0.0; NUM_BETAS], t }
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// Eased interpolation through `(frame, params)` keys sorted by frame,
/// held constant outside their range.
fn interpolate(keys: &[(usize, HandPoseParams)], frames: usize) -> Vec<HandPoseParams> {
    (0..frames)
        .map(|f| {
            let next = keys.iter().position(|(k, _)| *k >= f);
            match next {
                None => keys[keys.len() - 1].1.clone(),
                Some(i) if i == 0 || keys[i].0 == f => keys[i].1.clone(),
                Some(i) => {
                    let (f0, a) = &keys[i - 1];
                    let (f1, b) = &keys[i];
                    let s = smoothstep((f - f0) as f64 / (f1 - f0) as f64);
                    let lerp = |x: &f64, y: &f64| x + s * (y - x);
                    HandPoseParams {
                        theta: a.theta.iter().zip(&b.theta).map(|(x, y)| lerp(x, y)).collect(),
                        beta: a.beta.clone(),
                        t: [0, 1, 2].map(|k| lerp(&a.t[k], &b.t[k])),
                    }
                }
            }
        })
        .collect()
}

struct HandMotion {
    params: Vec<HandPoseParams>,
    model: HandModel,
}

fn hand_motions(spec: &SceneSpec, right_model: &HandModel) -> [HandMotion; 2] {
    let mut rng = stream(spec.seed, STREAM_HANDS);
    let motion = &spec.motion;
    let base = Vec3::new(motion.hand_spacing_m / 2.0, 0.0, 0.0);
    let keys = (spec.frames - 1).div_ceil(motion.keyframe_interval) + 1;
    // both hands are always drawn, right first, so either can be scripted
    // without changing the other
    let mut out = vec![];
    for side in [HandSide::Right, HandSide::Left] {
        let beta: Vec<f64> = (0..NUM_BETAS).map(|_| symmetric(&mut rng, 0.5)).collect();
        let random: Vec<(usize, HandPoseParams)> = (0..keys)
            .map(|k| {
                let p = random_keyframe(&mut rng, motion, base);
                let p = HandPoseParams { beta: beta.clone(), ..p };
                let p = if side == HandSide::Left { p.mirrored() } else { p };
                (k * motion.keyframe_interval, p)
            })
            .collect();
        let mut scripted: Vec<(usize, HandPoseParams)> =
            motion.keyframes.iter().filter(|k| k.hand == side).map(|k| (k.frame, k.params.clone())).collect();
        scripted.sort_by_key(|(f, _)| *f);
        scripted.dedup_by_key(|(f, _)| *f);
        let keys = if scripted.is_empty() { random } else { scripted };
        let model = if side == HandSide::Left { right_model.mirrored() } else { right_model.clone() };
        out.push(HandMotion { params: interpolate(&keys, spec.frames), model });
    }
    let left = out.pop().expect("two hands");
    let right = out.pop().expect("two hands");
    [left, right]
}

fn motion_for(motions: &[HandMotion; 2], side: HandSide) -> &HandMotion {
    match side {
        HandSide::Left => &motions[0],
        HandSide::Right => &motions[1],
    }
}

/// The rigid part of the hand motion: global rotation about the shaped
/// wrist joint followed by the translation.
fn global_transform(params: &HandPoseParams, wrist: &Vec3) -> RigidTransform {
    let r = so3_exp(&params.joint_rotation(0));
    RigidTransform { rotation: r, translation: wrist - r * wrist + params.translation() }
}

/// Signed clearance between hand vertices and an object: the smallest
/// vertex distance, or minus the deepest penetration behind the object's
/// vertex tangent planes when there is any.
fn clearance(hand: &[Vec3], object: &IndexedMesh) -> Result<f64, SynthError> {
    let mut nearest = f64::INFINITY;
    let mut deepest = 0.0f64;
    for h in hand {
        let hit = object.index.nearest(h)?;
        let d = h - object.mesh.vertices()[hit.index];
        deepest = deepest.max(-object.mesh.normals()[hit.index].dot(&d));
        nearest = nearest.min(hit.distance);
    }
    Ok(if deepest > 0.0 { -deepest } else { nearest })
}

/// Object placement in the hand's rest frame: centred over the palm and
/// moved along the palm normal until its signed clearance equals `gap`.
fn grip_offset(model: &HandModel, beta: &[f64], mesh: &TriMesh, gap: f64) -> Result<RigidTransform, SynthError> {
    let (lo, hi) = mesh.bounds().ok_or_else(|| invalid("object mesh is empty"))?;
    let centre = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0;
    let hand = model.shape(beta).vertices;
    let object = IndexedMesh::new(mesh.clone());
    let palm = hand.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
    let at = |z: f64| Vec3::new(0.0, GRIP_HEIGHT, z) - centre;
    let gap_at = |z: f64| -> Result<f64, SynthError> {
        let shift = at(z);
        let local: Vec<Vec3> = hand.iter().map(|v| v - shift).collect();
        clearance(&local, &object)
    };
    // `far` leaves the hand clear of the object, `near` sinks it in; the
    // clearance grows as the object moves away along −z
    let (mut near, mut far) = (palm + half.z, palm - half.z - gap.abs() - 0.05);
    if gap_at(far)? < gap {
        return Err(invalid("object cannot be placed with the requested gap"));
    }
    for _ in 0..GRIP_BISECTIONS {
        let mid = 0.5 * (near + far);
        if gap_at(mid)? < gap {
            near = mid;
        } else {
            far = mid;
        }
    }
    Ok(RigidTransform::from_translation(at(far)))
}

/// Picks `k` well-spread vertex indices among `candidates`.
fn farthest_points(vertices: &[Vec3], candidates: &[usize], k: usize) -> Vec<usize> {
    let mut chosen = vec![candidates[0]];
    let mut dist: Vec<f64> = candidates.iter().map(|&c| (vertices[c] - vertices[chosen[0]]).norm()).collect();
    while chosen.len() < k {
        let (i, _) = dist.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("candidates");
        let pick = candidates[i];
        chosen.push(pick);
        for (d, &c) in dist.iter_mut().zip(candidates) {
            *d = d.min((vertices[c] - vertices[pick]).norm());
        }
    }
    chosen
}

/// Rotation by `angle` about `axis` through `centre`, then a shift by
/// `shift`, as a rigid transform.
fn perturbation(axis: Vec3, angle: f64, centre: Vec3, shift: Vec3) -> RigidTransform {
    let r = so3_exp(&(axis * angle));
    RigidTransform { rotation: r, translation: centre - r * centre + shift }
}

struct ObjectScene {
    truth: ObjectTruth,
    mesh: TriMesh,
    rig: MarkerRig,
    t_init: RigidTransform,
    /// Object-frame marker positions.
    surface: Vec<Vec3>,
}

fn build_objects(spec: &SceneSpec, motions: &[HandMotion; 2]) -> Result<Vec<ObjectScene>, SynthError> {
    let mut rng = stream(spec.seed, STREAM_OBJECTS);
    spec.objects
        .iter()
        .map(|o| {
            let mesh = o.shape.build()?;
            if mesh.vertices().len() < o.markers {
                return Err(invalid(format!("object {} has fewer vertices than markers", o.name)));
            }
            let hand = motion_for(motions, o.holder);
            let beta = &hand.params[0].beta;
            let offset = grip_offset(&hand.model, beta, &mesh, o.gap)?;
            let wrist = hand.model.shape(beta).joints[0];
            let poses = hand.params.iter().map(|p| global_transform(p, &wrist).compose(&offset)).collect();

            let n = mesh.vertices().len();
            let candidates: Vec<usize> = (0..o.marker_candidates).map(|_| rng.random_range(0..n)).collect();
            let picked = farthest_points(mesh.vertices(), &candidates, o.markers);
            let surface: Vec<Vec3> = picked.iter().map(|&i| mesh.vertices()[i]).collect();

            let axis = random_unit(&mut rng);
            let angle = rng.random_range(0.0..PI);
            let shift = Vec3::new(symmetric(&mut rng, 0.05), symmetric(&mut rng, 0.05), symmetric(&mut rng, 0.05));
            let t_star = RigidTransform::from_axis_angle(&(axis * angle), shift);
            let tracked = o.tracked.clone().unwrap_or_else(|| (0..o.markers).collect());
            let rig = MarkerRig::new(surface.iter().map(|p| t_star.apply(p)).collect(), tracked)?;

            let centroid = mesh.vertices().iter().sum::<Vec3>() / n as f64;
            let axis = random_unit(&mut rng);
            let dir = random_unit(&mut rng);
            let m = &spec.mocap;
            let shift = t_star.rotation.transpose() * dir * (m.init_translation_mm / 1000.0);
            let t_init = t_star.compose(&perturbation(axis, m.init_rotation_deg.to_radians(), centroid, shift));

            let truth = ObjectTruth { name: o.name.clone(), holder: o.holder, t_star, poses };
            Ok(ObjectScene { truth, mesh, rig, t_init, surface })
        })
        .collect()
}

fn camera_frame(spec: &SceneSpec, mocap_frame: usize) -> usize {
    mocap_frame.saturating_sub(spec.mocap.frame_offset).min(spec.frames - 1)
}

fn mocap_frames(spec: &SceneSpec) -> usize {
    spec.frames + spec.mocap.frame_offset + 3
}

fn clean_markers(spec: &SceneSpec, object: &ObjectScene) -> Vec<MarkerFrame> {
    (0..mocap_frames(spec))
        .map(|m| {
            let pose = &object.truth.poses[camera_frame(spec, m)];
            let markers = object
                .surface
                .iter()
                .enumerate()
                .map(|(id, p)| {
                    let w = pose.apply(p);
                    MarkerObservation { id, x: w.x, y: w.y, z: w.z, visible: true }
                })
                .collect();
            MarkerFrame { frame: m, markers }
        })
        .collect()
}

fn corrupt_markers(frames: &[MarkerFrame], noise: &NoiseSpec, rng: &mut impl Rng) -> Vec<MarkerFrame> {
    let sigma = noise.marker_jitter_mm / 1000.0;
    frames
        .iter()
        .map(|f| {
            let markers = f
                .markers
                .iter()
                .map(|m| {
                    let mut m = *m;
                    if sigma > 0.0 {
                        m.x += sigma * gaussian(rng);
                        m.y += sigma * gaussian(rng);
                        m.z += sigma * gaussian(rng);
                    }
                    if noise.marker_dropout > 0.0 && rng.random::<f64>() < noise.marker_dropout {
                        m.visible = false;
                    }
                    m
                })
                .collect();
            MarkerFrame { frame: f.frame, markers }
        })
        .collect()
}

fn frame_time(spec: &SceneSpec, frame: i64) -> i64 {
    spec.mocap.start_utc_ms + (frame as f64 * 1000.0 / spec.fps).round() as i64
}

fn timestamps(spec: &SceneSpec, jitter: Option<&mut ChaCha8Rng>) -> Vec<TimestampRecord> {
    let mut out: Vec<TimestampRecord> = (0..spec.frames)
        .map(|f| TimestampRecord { sensor_id: CAMERA_SENSOR.into(), frame: f, utc_ms: frame_time(spec, f as i64) })
        .collect();
    let offset = spec.mocap.frame_offset as i64;
    let j = spec.noise.timestamp_jitter_ms;
    let mut jitter = jitter;
    for m in 0..mocap_frames(spec) {
        let mut utc = frame_time(spec, m as i64 - offset) + spec.mocap.time_offset_ms;
        if let Some(rng) = jitter.as_deref_mut() {
            if j > 0 {
                utc += rng.random_range(-j..=j);
            }
        }
        out.push(TimestampRecord { sensor_id: MOCAP_SENSOR.into(), frame: m, utc_ms: utc });
    }
    out
}

fn calibration(spec: &SceneSpec, cameras: &[CameraModel]) -> Result<Vec<Vec<CalibrationObservation>>, SynthError> {
    let mut rng = stream(spec.seed, STREAM_CALIBRATION);
    let points: Vec<Vec3> = (0..spec.calibration_points)
        .map(|_| Vec3::new(symmetric(&mut rng, 0.35), rng.random_range(-0.15..0.45), symmetric(&mut rng, 0.35)))
        .collect();
    cameras
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            let obs: Vec<CalibrationObservation> = points
                .iter()
                .filter_map(|p| cam.project(p).ok().filter(|px| cam.intrinsics.contains(px)).map(|px| CalibrationObservation::new(*p, px)))
                .collect();
            if obs.len() < 6 {
                return Err(invalid(format!("camera {i} sees only {} calibration points", obs.len())));
            }
            Ok(obs)
        })
        .collect()
}

fn corrupt_calibration(clean: &[Vec<CalibrationObservation>], cameras: &[CameraModel], sigma: f64, rng: &mut impl Rng) -> Vec<Vec<CalibrationObservation>> {
    clean
        .iter()
        .zip(cameras)
        .map(|(obs, cam)| {
            obs.iter()
                .map(|o| {
                    let mut o = *o;
                    if sigma > 0.0 {
                        o.pixel[0] += sigma * gaussian(rng);
                        o.pixel[1] += sigma * gaussian(rng);
                        if let (Some(w), Some(h)) = (cam.intrinsics.width, cam.intrinsics.height) {
                            o.pixel[0] = o.pixel[0].clamp(0.0, w as f64);
                            o.pixel[1] = o.pixel[1].clamp(0.0, h as f64);
                        }
                    }
                    o
                })
                .collect()
        })
        .collect()
}

fn project_hand(cameras: &[CameraModel], joints: &[Vec3]) -> Keypoints2D {
    let views = cameras
        .iter()
        .map(|cam| {
            std::array::from_fn(|j| {
                cam.project(&joints[j])
                    .ok()
                    .filter(|px| cam.intrinsics.contains(px))
                    .map(|px| Keypoint2D::new(px, 1.0))
            })
        })
        .collect();
    Keypoints2D { views }
}

fn corrupt_keypoints(
    clean: &[KeypointRecord],
    cameras: &[CameraModel],
    noise: &NoiseSpec,
    rng: &mut impl Rng,
) -> Vec<KeypointRecord> {
    clean
        .iter()
        .map(|rec| {
            let mut rec = rec.clone();
            for (view, cam) in rec.keypoints.views.iter_mut().zip(cameras) {
                let (w, h) = (cam.intrinsics.width.unwrap_or(0) as f64, cam.intrinsics.height.unwrap_or(0) as f64);
                for kp in view.iter_mut().flatten() {
                    if noise.outlier_rate > 0.0 && rng.random::<f64>() < noise.outlier_rate {
                        kp.pixel = [rng.random_range(0.0..w.max(1.0)), rng.random_range(0.0..h.max(1.0))];
                    } else if noise.keypoint_sigma_px > 0.0 {
                        kp.pixel[0] += noise.keypoint_sigma_px * gaussian(rng);
                        kp.pixel[1] += noise.keypoint_sigma_px * gaussian(rng);
                    }
                }
            }
            rec
        })
        .collect()
}

fn observed_sides(spec: &SceneSpec) -> Vec<HandSide> {
    [HandSide::Left, HandSide::Right].into_iter().filter(|s| spec.hands.contains(s)).collect()
}

/// Builds a scene and all of its observations.
pub fn generate(spec: &SceneSpec) -> Result<GroundTruthBundle, SynthError> {
    spec.validate()?;
    let model = HandModel::synthetic(spec.hand_vertices)?;
    let cameras = camera_rig(&spec.cameras)?;
    let motions = hand_motions(spec, &model);
    let objects = build_objects(spec, &motions)?;
    let sides = observed_sides(spec);

    let mut hands = vec![];
    for &side in &sides {
        let m = motion_for(&motions, side);
        let joints = m.params.iter().map(|p| Ok(m.model.forward(p)?.joints)).collect::<Result<Vec<_>, SynthError>>()?;
        hands.push(HandTruth { side, params: m.params.clone(), joints });
    }
    let frame_ids: Vec<usize> = (0..spec.frames).collect();
    let mut keypoints = vec![];
    for &frame in &frame_ids {
        for hand in &hands {
            keypoints.push(KeypointRecord { frame, hand: hand.side, keypoints: project_hand(&cameras, &hand.joints[frame]) });
        }
    }
    let mut betas = Betas::default();
    for hand in &hands {
        let beta = Some(hand.params[0].beta.clone());
        match hand.side {
            HandSide::Left => betas.left = beta,
            HandSide::Right => betas.right = beta,
        }
    }
    let calib = calibration(spec, &cameras)?;
    let clean_objects: Vec<ObjectInputs> = objects
        .iter()
        .map(|o| ObjectInputs { name: o.truth.name.clone(), rig: o.rig.clone(), t_init: o.t_init, markers: clean_markers(spec, o) })
        .collect();
    let clean = SceneInputs {
        intrinsics: cameras.iter().map(|c| c.intrinsics).collect(),
        calibration: calib,
        timestamps: timestamps(spec, None),
        keypoints,
        objects: clean_objects,
        betas,
    };

    let noise = &spec.noise;
    let observed = SceneInputs {
        intrinsics: clean.intrinsics.clone(),
        calibration: corrupt_calibration(
            &clean.calibration,
            &cameras,
            noise.calibration_sigma_px,
            &mut stream(spec.seed, STREAM_CALIBRATION_NOISE),
        ),
        timestamps: timestamps(spec, Some(&mut stream(spec.seed, STREAM_TIMESTAMP_NOISE))),
        keypoints: corrupt_keypoints(&clean.keypoints, &cameras, noise, &mut stream(spec.seed, STREAM_KEYPOINT_NOISE)),
        objects: {
            let mut rng = stream(spec.seed, STREAM_MARKER_NOISE);
            clean
                .objects
                .iter()
                .map(|o| ObjectInputs { markers: corrupt_markers(&o.markers, noise, &mut rng), ..o.clone() })
                .collect()
        },
        betas: clean.betas.clone(),
    };

    let truth = GroundTruth {
        fps: spec.fps,
        frame_ids,
        mocap_frame_offset: spec.mocap.frame_offset,
        cameras,
        hands,
        objects: objects.iter().map(|o| o.truth.clone()).collect(),
    };
    Ok(GroundTruthBundle {
        spec: spec.clone(),
        model,
        meshes: objects.into_iter().map(|o| o.mesh).collect(),
        truth,
        clean,
        observed,
    })
}

impl GroundTruthBundle {
    pub fn model_for(&self, side: HandSide) -> HandModel {
        match side {
            HandSide::Right => self.model.clone(),
            HandSide::Left => self.model.mirrored(),
        }
    }

    /// Writes the observed inputs, the scene spec and the ground truth.
    pub fn write(&self, layout: &SceneLayout) -> Result<(), SynthError> {
        let inputs = &self.observed;
        write_json(&layout.intrinsics(), &inputs.intrinsics)?;
        write_json(&layout.calibration(), &inputs.calibration)?;
        write_jsonl(&layout.timestamps(), &inputs.timestamps)?;
        write_jsonl(&layout.keypoints(), &inputs.keypoints)?;
        crate::io::ensure_parent(&layout.model())?;
        self.model.save(&layout.model())?;
        write_json(&layout.betas(), &inputs.betas)?;
        for (o, mesh) in inputs.objects.iter().zip(&self.meshes) {
            crate::io::ensure_parent(&layout.mesh(&o.name))?;
            mesh.write_obj(&layout.mesh(&o.name))?;
            write_json(&layout.rig(&o.name), &o.rig)?;
            write_json(&layout.init(&o.name), &o.t_init)?;
            write_jsonl(&layout.markers(&o.name), &o.markers)?;
        }
        write_json(&layout.spec(), &self.spec)?;
        write_json(&layout.ground_truth(), &self.truth)?;
        Ok(())
    }

    pub fn score(&self, outputs: &PipelineOutputs, options: &ScoreOptions) -> Result<MetricReport, SynthError> {
        let models = [self.model.mirrored(), self.model.clone()];
        score_pipeline(&self.truth, &models, &self.meshes, outputs, options)
    }

    /// Outputs that reproduce the ground truth exactly.
    pub fn perfect_outputs(&self) -> PipelineOutputs {
        let hand = |side| self.truth.hands.iter().find(|h| h.side == side);
        let frames = self
            .truth
            .frame_ids
            .iter()
            .enumerate()
            .map(|(k, &frame)| crate::fitting::FrameFit {
                frame,
                left: hand(HandSide::Left).map(|h| h.params[k].clone()),
                right: hand(HandSide::Right).map(|h| h.params[k].clone()),
                losses: Default::default(),
            })
            .collect();
        PipelineOutputs {
            fit: Some(SequenceFit { frames, diagnostics: Default::default() }),
            objects: self
                .truth
                .objects
                .iter()
                .map(|o| ObjectEstimate {
                    name: o.name.clone(),
                    t_star: Some(o.t_star),
                    poses: o.poses.iter().map(|p| Some(*p)).collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEstimate {
    pub name: String,
    pub t_star: Option<RigidTransform>,
    /// One entry per ground-truth frame; `None` where tracking failed.
    pub poses: Vec<Option<RigidTransform>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineOutputs {
    pub fit: Option<SequenceFit>,
    pub objects: Vec<ObjectEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    /// Also score interpenetration volume and contact against the held
    /// object. Voxelisation makes this the slow part of scoring.
    pub physical: bool,
    pub voxel: f64,
    pub contact_threshold: f64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self { physical: true, voxel: DEFAULT_VOXEL, contact_threshold: DEFAULT_CONTACT_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandReport {
    pub side: HandSide,
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    /// m/s²; absent for sequences shorter than three frames.
    pub acceleration_error: Option<f64>,
    /// Mean over frames, cm³.
    pub penetration_volume_cm3: Option<f64>,
    pub contact_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub name: String,
    pub tracked_frames: usize,
    /// Over tracked frames.
    pub translation_error_mm: Option<f64>,
    pub rotation_error_deg: Option<f64>,
    pub registration_translation_error_mm: Option<f64>,
    pub registration_rotation_error_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frames: usize,
    pub hands: Vec<HandReport>,
    pub objects: Vec<ObjectReport>,
}

fn mismatch(msg: impl Into<String>) -> SynthError {
    SynthError::ShapeMismatch(msg.into())
}

/// Scores pipeline outputs against ground truth. `models` holds the left
/// and right hand models, `meshes` the object meshes in truth order.
pub fn score_pipeline(
    truth: &GroundTruth,
    models: &[HandModel; 2],
    meshes: &[TriMesh],
    outputs: &PipelineOutputs,
    options: &ScoreOptions,
) -> Result<MetricReport, SynthError> {
    if meshes.len() != truth.objects.len() {
        return Err(mismatch(format!("{} meshes for {} objects", meshes.len(), truth.objects.len())));
    }
    let n = truth.frame_ids.len();
    let mut estimated_poses: Vec<Option<&ObjectEstimate>> = vec![None; truth.objects.len()];
    let mut objects = vec![];
    for est in &outputs.objects {
        let Some(i) = truth.objects.iter().position(|o| o.name == est.name) else {
            return Err(mismatch(format!("no ground truth for object {}", est.name)));
        };
        if est.poses.len() != n {
            return Err(mismatch(format!("object {}: {} poses for {n} frames", est.name, est.poses.len())));
        }
        estimated_poses[i] = Some(est);
        let gt = &truth.objects[i];
        let (pred, reference): (Vec<RigidTransform>, Vec<RigidTransform>) =
            est.poses.iter().zip(&gt.poses).filter_map(|(p, g)| p.map(|p| (p, *g))).unzip();
        let tracked = pred.len();
        let (t_err, r_err) = if tracked > 0 {
            (Some(translation_error(&pred, &reference)?), Some(rotation_error(&pred, &reference)?))
        } else {
            (None, None)
        };
        let (reg_t, reg_r) = match est.t_star {
            Some(t) => (Some(translation_error(&[t], &[gt.t_star])?), Some(rotation_error(&[t], &[gt.t_star])?)),
            None => (None, None),
        };
        objects.push(ObjectReport {
            name: est.name.clone(),
            tracked_frames: tracked,
            translation_error_mm: t_err,
            rotation_error_deg: r_err,
            registration_translation_error_mm: reg_t,
            registration_rotation_error_deg: reg_r,
        });
    }

    let mut hands = vec![];
    if let Some(fit) = &outputs.fit {
        if fit.frames.len() != n || fit.frames.iter().zip(&truth.frame_ids).any(|(f, id)| f.frame != *id) {
            return Err(mismatch("fitted frames do not match the ground-truth frames"));
        }
        for gt in &truth.hands {
            let params: Option<Vec<&HandPoseParams>> = fit
                .frames
                .iter()
                .map(|f| match gt.side {
                    HandSide::Left => f.left.as_ref(),
                    HandSide::Right => f.right.as_ref(),
                })
                .collect();
            let Some(params) = params else { continue };
            let model = &models[if gt.side == HandSide::Left { 0 } else { 1 }];
            let states = params.iter().map(|p| model.forward(p)).collect::<Result<Vec<_>, _>>()?;
            let pred: Vec<Vec<Vec3>> = states.iter().map(|s| s.joints.clone()).collect();
            let accel = if n >= 3 { Some(acceleration_error(&pred, &gt.joints, truth.fps)?) } else { None };
            let (pen, contact) = match truth.objects.iter().position(|o| o.holder == gt.side) {
                Some(i) if options.physical => {
                    let mut pen = 0.0;
                    let mut posed_hands = vec![];
                    let mut posed_objects = vec![];
                    for (k, state) in states.iter().enumerate() {
                        let pose = estimated_poses[i].and_then(|e| e.poses[k]).unwrap_or(truth.objects[i].poses[k]);
                        let object = meshes[i].transformed(&pose);
                        let hand = model.mesh(state);
                        pen += penetration_volume(&hand, &object, options.voxel)?;
                        posed_hands.push(hand);
                        posed_objects.push(IndexedMesh::new(object));
                    }
                    let samples: Vec<ContactSample> =
                        posed_hands.iter().zip(&posed_objects).map(|(hand, object)| ContactSample { hand, object }).collect();
                    (Some(pen / n as f64), Some(contact_ratio(&samples, options.contact_threshold, options.voxel)?))
                }
                _ => (None, None),
            };
            hands.push(HandReport {
                side: gt.side,
                mpjpe_mm: mpjpe(&pred, &gt.joints)?,
                pa_mpjpe_mm: pa_mpjpe(&pred, &gt.joints)?,
                acceleration_error: accel,
                penetration_volume_cm3: pen,
                contact_ratio: contact,
            });
        }
    }
    Ok(MetricReport { frames: n, hands, objects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::NUM_JOINTS;

    fn small() -> SceneSpec {
        SceneSpec { frames: 12, hand_vertices: 300, ..SceneSpec::default() }
    }

    #[test]
    fn zero_noise_observations_equal_clean() {
        let spec = SceneSpec { noise: NoiseSpec::none(), ..small() };
        let b = generate(&spec).unwrap();
        assert_eq!(b.observed, b.clean);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SceneSpec { noise: NoiseSpec { outlier_rate: 0.1, marker_jitter_mm: 1.0, marker_dropout: 0.05, ..NoiseSpec::default() }, ..small() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        a.write(&SceneLayout::new(dir_a.path())).unwrap();
        b.write(&SceneLayout::new(dir_b.path())).unwrap();
        for f in ["keypoints.jsonl", "ground_truth.json", "hand/model.bin", "objects/tool/mesh.obj", "objects/target/markers.jsonl"] {
            assert_eq!(std::fs::read(dir_a.path().join(f)).unwrap(), std::fs::read(dir_b.path().join(f)).unwrap(), "{f}");
        }
        let other = generate(&SceneSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(other.truth, a.truth);
    }

    #[test]
    fn clean_data_ignores_noise_settings() {
        let quiet = generate(&SceneSpec { noise: NoiseSpec::none(), ..small() }).unwrap();
        let loud = generate(&SceneSpec {
            noise: NoiseSpec { keypoint_sigma_px: 5.0, outlier_rate: 0.2, marker_jitter_mm: 2.0, ..NoiseSpec::default() },
            ..small()
        })
        .unwrap();
        assert_eq!(quiet.clean, loud.clean);
        assert_eq!(quiet.truth, loud.truth);
        assert_ne!(quiet.observed, loud.observed);
    }

    #[test]
    fn keypoint_noise_has_requested_sigma() {
        let spec = SceneSpec { frames: 30, ..small() };
        let b = generate(&spec).unwrap();
        let mut diffs = vec![];
        for (c, o) in b.clean.keypoints.iter().zip(&b.observed.keypoints) {
            for (vc, vo) in c.keypoints.views.iter().zip(&o.keypoints.views) {
                for (kc, ko) in vc.iter().zip(vo) {
                    if let (Some(kc), Some(ko)) = (kc, ko) {
                        diffs.push(ko.pixel[0] - kc.pixel[0]);
                        diffs.push(ko.pixel[1] - kc.pixel[1]);
                    }
                }
            }
        }
        assert!(diffs.len() >= 10_000, "{}", diffs.len());
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        assert!((var.sqrt() - 2.0).abs() < 0.2, "std {}", var.sqrt());
    }

    #[test]
    fn outliers_replace_the_requested_fraction() {
        let spec = SceneSpec { frames: 20, noise: NoiseSpec { keypoint_sigma_px: 0.0, outlier_rate: 0.25, ..NoiseSpec::none() }, ..small() };
        let b = generate(&spec).unwrap();
        let (mut moved, mut total) = (0usize, 0usize);
        for (c, o) in b.clean.keypoints.iter().zip(&b.observed.keypoints) {
            for (vc, vo) in c.keypoints.views.iter().zip(&o.keypoints.views) {
                for (kc, ko) in vc.iter().zip(vo) {
                    if let (Some(kc), Some(ko)) = (kc, ko) {
                        total += 1;
                        moved += (kc != ko) as usize;
                    }
                }
            }
        }
        let rate = moved as f64 / total as f64;
        assert!((rate - 0.25).abs() < 0.03, "{rate}");
    }

    #[test]
    fn clean_keypoints_are_joint_projections() {
        let b = generate(&SceneSpec { noise: NoiseSpec::none(), ..small() }).unwrap();
        let cams = &b.truth.cameras;
        for rec in &b.clean.keypoints {
            let hand = b.truth.hands.iter().find(|h| h.side == rec.hand).unwrap();
            let joints = &hand.joints[rec.frame];
            let mut visible = 0;
            for (c, view) in rec.keypoints.views.iter().enumerate() {
                for (j, kp) in view.iter().enumerate() {
                    if let Some(kp) = kp {
                        let p = cams[c].project(&joints[j]).unwrap();
                        assert!((kp.px() - p).norm() < 1e-9);
                        visible += 1;
                    }
                }
            }
            assert_eq!(visible, cams.len() * NUM_JOINTS, "hands stay in every view");
        }
    }

    #[test]
    fn markers_follow_the_object() {
        let spec = SceneSpec { noise: NoiseSpec::none(), ..small() };
        let b = generate(&spec).unwrap();
        for (o, inputs) in b.truth.objects.iter().zip(&b.clean.objects) {
            let markers = inputs.rig.markers();
            for frame in &inputs.markers {
                let pose = o.poses[camera_frame(&spec, frame.frame)];
                for m in &frame.markers {
                    let expected = pose.apply(&o.t_star.inverse().apply(&markers[m.id]));
                    assert!((Vec3::new(m.x, m.y, m.z) - expected).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn object_moves_rigidly_with_the_palm() {
        let b = generate(&SceneSpec { noise: NoiseSpec::none(), ..small() }).unwrap();
        for o in &b.truth.objects {
            let hand = b.truth.hands.iter().find(|h| h.side == o.holder).unwrap();
            let model = b.model_for(hand.side);
            let rooted: Vec<usize> = (0..model.num_vertices())
                .filter(|&v| (model.skinning_weight(v, 0) - 1.0).abs() < 1e-6)
                .take(20)
                .collect();
            assert!(!rooted.is_empty());
            let reference = model.forward(&hand.params[0]).unwrap();
            let to_object0 = o.poses[0].inverse();
            for (k, p) in hand.params.iter().enumerate() {
                let state = model.forward(p).unwrap();
                for &v in &rooted {
                    let a = o.poses[k].inverse().apply(&state.vertices[v]);
                    let b0 = to_object0.apply(&reference.vertices[v]);
                    assert!((a - b0).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn grip_gap_is_respected() {
        let b = generate(&SceneSpec { noise: NoiseSpec::none(), ..small() }).unwrap();
        for (o, mesh) in b.truth.objects.iter().zip(&b.meshes) {
            let hand = b.truth.hands.iter().find(|h| h.side == o.holder).unwrap();
            let model = b.model_for(hand.side);
            let state = model.forward(&hand.params[0]).unwrap();
            let object = IndexedMesh::new(mesh.transformed(&o.poses[0]));
            let nearest = state.vertices.iter().map(|v| object.index.nearest(v).unwrap().distance).fold(f64::INFINITY, f64::min);
            assert!(nearest > 0.01, "{} sits {nearest} m from the hand", o.name);
        }
    }

    #[test]
    fn grip_offset_hits_the_requested_clearance() {
        let model = HandModel::synthetic(300).unwrap();
        let beta = vec![0.0; NUM_BETAS];
        let mesh = TriMesh::ellipsoid(Vec3::zeros(), Vec3::new(0.03, 0.045, 0.02), 3);
        let object = IndexedMesh::new(mesh.clone());
        for gap in [0.012, 0.003, -0.002] {
            let offset = grip_offset(&model, &beta, &mesh, gap).unwrap();
            let local: Vec<Vec3> = model.shape(&beta).vertices.iter().map(|v| offset.inverse().apply(v)).collect();
            let c = clearance(&local, &object).unwrap();
            assert!((c - gap).abs() < 1e-6, "{gap} -> {c}");
        }
    }

    #[test]
    fn timestamps_pair_camera_and_mocap_frames() {
        let spec = small();
        let b = generate(&spec).unwrap();
        let streams = crate::calib::TimestampStream::from_records(&b.observed.timestamps).unwrap();
        let cams = streams.iter().find(|s| s.sensor_id == CAMERA_SENSOR).unwrap();
        let mocap = streams.iter().find(|s| s.sensor_id == MOCAP_SENSOR).unwrap();
        let pairs = crate::calib::match_streams(cams, mocap, crate::calib::DEFAULT_MAX_GAP_MS);
        assert_eq!(pairs.len(), spec.frames);
        assert!(pairs.iter().all(|p| p.other == p.reference + spec.mocap.frame_offset));
    }

    #[test]
    fn scripted_keyframes_are_hit() {
        let mut params = HandPoseParams::default();
        params.theta[3] = 0.2;
        params.t = [0.1, 0.0, 0.0];
        let mut later = params.clone();
        later.theta[3] = -0.1;
        let spec = SceneSpec {
            motion: MotionSpec {
                keyframes: vec![
                    Keyframe { frame: 2, hand: HandSide::Right, params: params.clone() },
                    Keyframe { frame: 8, hand: HandSide::Right, params: later.clone() },
                ],
                ..MotionSpec::default()
            },
            ..small()
        };
        let b = generate(&spec).unwrap();
        let right = b.truth.hands.iter().find(|h| h.side == HandSide::Right).unwrap();
        assert_eq!(right.params[0], params);
        assert_eq!(right.params[2], params);
        assert_eq!(right.params[8], later);
        assert_eq!(right.params[11], later);
        assert!((right.params[5].theta[3] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = [
            SceneSpec { cameras: CameraRigSpec { count: 1, ..CameraRigSpec::default() }, ..small() },
            SceneSpec { noise: NoiseSpec { keypoint_sigma_px: -1.0, ..NoiseSpec::default() }, ..small() },
            SceneSpec { noise: NoiseSpec { outlier_rate: 1.5, ..NoiseSpec::default() }, ..small() },
            SceneSpec { frames: 0, ..small() },
            SceneSpec { hand_vertices: 10, ..small() },
        ];
        for spec in bad {
            assert!(matches!(generate(&spec), Err(SynthError::InvalidSpec(_))));
        }
        let mut dup = small();
        dup.objects[1].name = "tool".into();
        assert!(matches!(generate(&dup), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn ground_truth_scores_zero() {
        let b = generate(&small()).unwrap();
        let report = b.score(&b.perfect_outputs(), &ScoreOptions::default()).unwrap();
        assert_eq!(report.hands.len(), 2);
        for h in &report.hands {
            assert_eq!(h.mpjpe_mm, 0.0);
            assert!(h.pa_mpjpe_mm < 1e-9);
            assert_eq!(h.acceleration_error, Some(0.0));
            assert_eq!(h.penetration_volume_cm3, Some(0.0));
        }
        for o in &report.objects {
            assert_eq!(o.tracked_frames, 12);
            assert_eq!(o.translation_error_mm, Some(0.0));
            assert_eq!(o.rotation_error_deg, Some(0.0));
            assert_eq!(o.registration_translation_error_mm, Some(0.0));
        }
    }

    #[test]
    fn misaligned_outputs_are_rejected() {
        let b = generate(&small()).unwrap();
        let mut out = b.perfect_outputs();
        out.objects[0].poses.pop();
        assert!(matches!(b.score(&out, &ScoreOptions::default()), Err(SynthError::ShapeMismatch(_))));
        let mut out = b.perfect_outputs();
        out.fit.as_mut().unwrap().frames.remove(3);
        assert!(matches!(b.score(&out, &ScoreOptions::default()), Err(SynthError::ShapeMismatch(_))));
    }

    #[test]
    fn written_scene_reads_back() {
        let b = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let layout = SceneLayout::new(dir.path());
        b.write(&layout).unwrap();
        let keypoints: Vec<KeypointRecord> = crate::io::read_jsonl(&layout.keypoints()).unwrap();
        assert_eq!(keypoints, b.observed.keypoints);
        let truth: GroundTruth = crate::io::read_json(&layout.ground_truth()).unwrap();
        assert_eq!(truth, b.truth);
        let mesh = TriMesh::load(&layout.mesh("tool")).unwrap();
        assert_eq!(mesh, b.meshes[0]);
        assert_eq!(HandModel::load(&layout.model()).unwrap(), b.model);
        let spec: SceneSpec = crate::io::read_json(&layout.spec()).unwrap();
        assert_eq!(spec, b.spec);
    }
}
