use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use hoa_core::calib::{match_streams, solve_extrinsic, CalibrationObservation, TimestampRecord, TimestampStream};
use hoa_core::fitting::{assemble, fit_hand, ContactTrack, HandObservation, HandTrackInput, SequenceFit};
use hoa_core::fusion::{fuse_hand, FusedKeypoints3D, FusedRecord, KeypointRecord, Keypoints2D};
use hoa_core::geometry::{CameraModel, IndexedMesh, Intrinsics, RigidTransform, TriMesh};
use hoa_core::hand::{HandModel, HandSide};
use hoa_core::io::{read_json, read_jsonl, write_json, write_jsonl};
use hoa_core::registration::{frame_object_pose, register_rig, MarkerFrame, MarkerRig, RegistrationResult};
use hoa_core::synth::{
    generate, score_pipeline, Betas, GroundTruth, ObjectEstimate, PipelineOutputs, SceneLayout, SceneSpec, SynthError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::manifest::{key, sha256_file, sha256_hex, Manifest, StageRecord};
use crate::{CliError, LoadedConfig, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    CalibrateExtrinsic,
    Sync,
    FuseKeypoints,
    RegisterObject,
    TrackObject,
    FitHands,
    Evaluate,
}

impl Stage {
    /// Execution order of `all`.
    pub const PIPELINE: [Stage; 7] = [
        Stage::CalibrateExtrinsic,
        Stage::Sync,
        Stage::FuseKeypoints,
        Stage::RegisterObject,
        Stage::TrackObject,
        Stage::FitHands,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::CalibrateExtrinsic => "calibrate-extrinsic",
            Stage::Sync => "sync",
            Stage::FuseKeypoints => "fuse-keypoints",
            Stage::RegisterObject => "register-object",
            Stage::TrackObject => "track-object",
            Stage::FitHands => "fit-hands",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// Artifact locations inside the output directory.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn cameras(&self) -> PathBuf {
        self.root.join("cameras.json")
    }

    pub fn calibration_report(&self) -> PathBuf {
        self.root.join("calibration_report.json")
    }

    pub fn sync(&self) -> PathBuf {
        self.root.join("sync.json")
    }

    pub fn fused(&self) -> PathBuf {
        self.root.join("fused.jsonl")
    }

    pub fn registration(&self, object: &str) -> PathBuf {
        self.root.join("objects").join(object).join("registration.json")
    }

    pub fn poses(&self, object: &str) -> PathBuf {
        self.root.join("objects").join(object).join("poses.jsonl")
    }

    pub fn fit(&self) -> PathBuf {
        self.root.join("fit.json")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub camera: usize,
    pub observations: usize,
    pub mean_reprojection_error_px: f64,
    pub rms_reprojection_error_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePair {
    pub reference_frame: usize,
    pub other_frame: usize,
    /// Other minus reference timestamp.
    pub delta_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    pub reference: String,
    pub other: String,
    pub max_gap_ms: i64,
    /// Every frame of the reference sensor, ascending.
    pub reference_frames: Vec<usize>,
    pub pairs: Vec<FramePair>,
}

/// One line of an object's pose track, per reference frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: usize,
    pub mocap_frame: Option<usize>,
    /// Object model → world.
    pub pose: Option<RigidTransform>,
    pub rms: Option<f64>,
    pub error: Option<String>,
}

fn numeric<E: Display>(stage: Stage) -> impl Fn(E) -> CliError {
    move |e| CliError::Numeric { stage: stage.name(), message: e.to_string() }
}

fn load_mesh(path: &Path) -> Result<TriMesh, CliError> {
    TriMesh::load(path).map_err(|e| CliError::input(path, e))
}

fn load_model(path: &Path) -> Result<HandModel, CliError> {
    HandModel::load(path).map_err(|e| CliError::input(path, e))
}

fn model_for(model: &HandModel, side: HandSide) -> HandModel {
    if model.side() == side {
        model.clone()
    } else {
        model.mirrored()
    }
}

/// Bookkeeping for one stage: resolves and hashes what it reads and writes.
struct Run<'a> {
    cfg: &'a LoadedConfig,
    out: OutputLayout,
    record: StageRecord,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a LoadedConfig) -> Self {
        let mut hashed = cfg.config.clone();
        // where the artifacts go does not change them
        hashed.output = PathBuf::new();
        let bytes = serde_json::to_vec(&hashed).expect("serialisable config");
        let record = StageRecord { seed: cfg.config.seed, config_sha256: sha256_hex(&bytes), ..Default::default() };
        Self { cfg, out: OutputLayout::new(&cfg.output), record }
    }

    fn config(&self) -> &'a PipelineConfig {
        &self.cfg.config
    }

    fn input(&mut self, configured: &Path) -> Result<PathBuf, CliError> {
        let path = self.cfg.resolve(configured);
        self.record.inputs.insert(key(configured), sha256_file(&path)?);
        Ok(path)
    }

    fn relative(&self, path: &Path) -> String {
        key(path.strip_prefix(&self.out.root).unwrap_or(path))
    }

    fn artifact(&mut self, path: PathBuf) -> Result<PathBuf, CliError> {
        let hash = sha256_file(&path)?;
        self.record.artifacts.insert(self.relative(&path), hash);
        Ok(path)
    }

    fn output(&mut self, path: &Path) -> Result<(), CliError> {
        let hash = sha256_file(path)?;
        self.record.outputs.insert(self.relative(path), hash);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<(), CliError> {
        write_json(path, value)?;
        self.output(path)
    }

    fn write_jsonl<T: Serialize>(&mut self, path: &Path, records: &[T]) -> Result<(), CliError> {
        write_jsonl(path, records)?;
        self.output(path)
    }
}

/// Runs one stage and records it in the manifest. Returns a one-line
/// summary.
pub fn run_stage(stage: Stage, cfg: &LoadedConfig) -> Result<String, CliError> {
    cfg.config.validate()?;
    let mut run = Run::new(cfg);
    let summary = match stage {
        Stage::CalibrateExtrinsic => calibrate(&mut run)?,
        Stage::Sync => sync(&mut run)?,
        Stage::FuseKeypoints => fuse(&mut run)?,
        Stage::RegisterObject => register(&mut run)?,
        Stage::TrackObject => track(&mut run)?,
        Stage::FitHands => fit(&mut run)?,
        Stage::Evaluate => evaluate(&mut run)?,
    };
    Manifest::record(&run.out.manifest(), stage.name(), run.record)?;
    Ok(summary)
}

/// Runs every stage in order; evaluation only when ground truth is
/// configured.
pub fn run_all(cfg: &LoadedConfig) -> Result<Vec<(Stage, String)>, CliError> {
    let mut out = vec![];
    for stage in Stage::PIPELINE {
        if stage == Stage::Evaluate && cfg.config.inputs.ground_truth.is_none() {
            continue;
        }
        out.push((stage, run_stage(stage, cfg)?));
    }
    Ok(out)
}

fn calibrate(run: &mut Run) -> Result<String, CliError> {
    let stage = Stage::CalibrateExtrinsic;
    let inputs = &run.config().inputs;
    let intrinsics_path = run.input(&inputs.intrinsics)?;
    let calibration_path = run.input(&inputs.calibration)?;
    let intrinsics: Vec<Intrinsics> = read_json(&intrinsics_path)?;
    let observations: Vec<Vec<CalibrationObservation>> = read_json(&calibration_path)?;
    if intrinsics.len() != observations.len() {
        return Err(CliError::input(
            &calibration_path,
            format!("{} cameras observed but {} intrinsics given", observations.len(), intrinsics.len()),
        ));
    }
    let solved = intrinsics
        .par_iter()
        .zip(observations.par_iter())
        .enumerate()
        .map(|(i, (k, obs))| {
            let sol = solve_extrinsic(k, obs).map_err(|e| numeric(stage)(format!("camera {i}: {e}")))?;
            let camera = CameraModel::new(*k, sol.extrinsic).map_err(|e| numeric(stage)(format!("camera {i}: {e}")))?;
            let report = CalibrationReport {
                camera: i,
                observations: obs.len(),
                mean_reprojection_error_px: sol.mean_reprojection_error,
                rms_reprojection_error_px: sol.rms_reprojection_error,
            };
            Ok((camera, report))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let (cameras, reports): (Vec<CameraModel>, Vec<CalibrationReport>) = solved.into_iter().unzip();
    let worst = reports.iter().map(|r| r.rms_reprojection_error_px).fold(0.0, f64::max);
    run.write_json(&run.out.cameras(), &cameras)?;
    run.write_json(&run.out.calibration_report(), &reports)?;
    Ok(format!("{} cameras, worst rms reprojection error {worst:.3} px", cameras.len()))
}

fn sync(run: &mut Run) -> Result<String, CliError> {
    let settings = &run.config().sync;
    let path = run.input(&run.config().inputs.timestamps)?;
    let records: Vec<TimestampRecord> = read_jsonl(&path)?;
    let frames_of = |id: &str| -> Result<Vec<usize>, CliError> {
        let mut frames: Vec<usize> = records.iter().filter(|r| r.sensor_id == id).map(|r| r.frame).collect();
        if frames.is_empty() {
            return Err(CliError::input(&path, format!("no records for sensor {id}")));
        }
        frames.sort_unstable();
        if frames.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::input(&path, format!("sensor {id} repeats a frame")));
        }
        Ok(frames)
    };
    let reference_frames = frames_of(&settings.reference)?;
    let other_frames = frames_of(&settings.mocap)?;
    let streams = TimestampStream::from_records(&records).map_err(numeric(Stage::Sync))?;
    let find = |id: &str| streams.iter().find(|s| s.sensor_id == id).expect("sensor has records");
    let pairs: Vec<FramePair> = match_streams(find(&settings.reference), find(&settings.mocap), settings.max_gap_ms)
        .into_iter()
        .map(|p| FramePair {
            reference_frame: reference_frames[p.reference],
            other_frame: other_frames[p.other],
            delta_ms: p.delta_ms,
        })
        .collect();
    let result = SyncResult {
        reference: settings.reference.clone(),
        other: settings.mocap.clone(),
        max_gap_ms: settings.max_gap_ms,
        reference_frames,
        pairs,
    };
    run.write_json(&run.out.sync(), &result)?;
    Ok(format!("{} of {} {} frames matched to {}", result.pairs.len(), result.reference_frames.len(), result.reference, result.other))
}

/// The fusion stage proper, shared with callers that want the records
/// without going through files.
pub fn fuse_records(cameras: &[CameraModel], records: &[KeypointRecord], cfg: &PipelineConfig) -> Vec<FusedRecord> {
    let fusion = cfg.fusion_config();
    records
        .par_iter()
        .map(|r| FusedRecord { frame: r.frame, hand: r.hand, fused: fuse_hand(cameras, &r.keypoints, &fusion) })
        .collect()
}

fn fuse(run: &mut Run) -> Result<String, CliError> {
    let cameras_path = run.artifact(run.out.cameras())?;
    let keypoints_path = run.input(&run.config().inputs.keypoints)?;
    let cameras: Vec<CameraModel> = read_json(&cameras_path)?;
    let records: Vec<KeypointRecord> = read_jsonl(&keypoints_path)?;
    if let Some(r) = records.iter().find(|r| r.keypoints.views.len() != cameras.len()) {
        return Err(CliError::input(
            &keypoints_path,
            format!("frame {} has {} views for {} cameras", r.frame, r.keypoints.views.len(), cameras.len()),
        ));
    }
    let fused = fuse_records(&cameras, &records, run.config());
    let joints: usize = fused.iter().map(|r| r.fused.joints.len()).sum();
    let valid: usize = fused.iter().map(|r| r.fused.joints.iter().filter(|j| j.is_ok()).count()).sum();
    run.write_jsonl(&run.out.fused(), &fused)?;
    Ok(format!("{} hand records, {valid} of {joints} joints fused", fused.len()))
}

fn register(run: &mut Run) -> Result<String, CliError> {
    let objects = &run.config().inputs.objects;
    let mut paths = vec![];
    for o in objects {
        paths.push((run.input(&o.mesh)?, run.input(&o.rig)?, run.input(&o.init)?));
    }
    let config = run.config().registration;
    let results = paths
        .par_iter()
        .zip(objects.par_iter())
        .map(|((mesh, rig, init), o)| {
            let mesh = IndexedMesh::new(load_mesh(mesh)?);
            let rig: MarkerRig = read_json(rig)?;
            let init: RigidTransform = read_json(init)?;
            register_rig(&rig, &mesh, &init, &config).map_err(|e| numeric(Stage::RegisterObject)(format!("{}: {e}", o.name)))
        })
        .collect::<Result<Vec<RegistrationResult>, CliError>>()?;
    let mut parts = vec![];
    for (o, r) in objects.iter().zip(&results) {
        run.write_json(&run.out.registration(&o.name), r)?;
        let mean = r.contact.iter().sum::<f64>() / r.contact.len().max(1) as f64;
        parts.push(format!("{}: mean contact {:.3} mm after {} iterations", o.name, 1000.0 * mean, r.iterations));
    }
    if parts.is_empty() {
        return Ok("no objects configured".into());
    }
    Ok(parts.join("; "))
}

fn track_one(sync: &SyncResult, rig: &MarkerRig, t_star: &RigidTransform, markers: &[MarkerFrame]) -> Vec<PoseRecord> {
    let pairs: BTreeMap<usize, &FramePair> = sync.pairs.iter().map(|p| (p.reference_frame, p)).collect();
    let by_frame: BTreeMap<usize, &MarkerFrame> = markers.iter().map(|m| (m.frame, m)).collect();
    sync.reference_frames
        .par_iter()
        .map(|&frame| {
            let failed = |mocap_frame, error: String| PoseRecord { frame, mocap_frame, pose: None, rms: None, error: Some(error) };
            let Some(pair) = pairs.get(&frame) else {
                return failed(None, "no mocap frame within the sync gap".into());
            };
            let mocap = Some(pair.other_frame);
            let Some(m) = by_frame.get(&pair.other_frame) else {
                return failed(mocap, "mocap frame has no marker record".into());
            };
            match frame_object_pose(rig, t_star, &m.tracked_positions(rig)) {
                Ok(p) => PoseRecord { frame, mocap_frame: mocap, pose: Some(p.pose), rms: Some(p.rms), error: None },
                Err(e) => failed(mocap, e.to_string()),
            }
        })
        .collect()
}

fn track(run: &mut Run) -> Result<String, CliError> {
    let sync_path = run.artifact(run.out.sync())?;
    let objects = &run.config().inputs.objects;
    let mut paths = vec![];
    for o in objects {
        paths.push((run.artifact(run.out.registration(&o.name))?, run.input(&o.rig)?, run.input(&o.markers)?));
    }
    let sync: SyncResult = read_json(&sync_path)?;
    let mut parts = vec![];
    for (o, (reg, rig, markers)) in objects.iter().zip(&paths) {
        let reg: RegistrationResult = read_json(reg)?;
        let rig: MarkerRig = read_json(rig)?;
        let markers: Vec<MarkerFrame> = read_jsonl(markers)?;
        let records = track_one(&sync, &rig, &reg.t_star, &markers);
        let tracked = records.iter().filter(|r| r.pose.is_some()).count();
        run.write_jsonl(&run.out.poses(&o.name), &records)?;
        parts.push(format!("{}: {tracked}/{} frames", o.name, records.len()));
    }
    if parts.is_empty() {
        return Ok("no objects configured".into());
    }
    Ok(parts.join("; "))
}

fn read_poses(path: &Path) -> Result<BTreeMap<usize, RigidTransform>, CliError> {
    let records: Vec<PoseRecord> = read_jsonl(path)?;
    Ok(records.into_iter().filter_map(|r| r.pose.map(|p| (r.frame, p))).collect())
}

fn fit(run: &mut Run) -> Result<String, CliError> {
    let stage = Stage::FitHands;
    let cfg = run.config();
    let cameras_path = run.artifact(run.out.cameras())?;
    let fused_path = run.artifact(run.out.fused())?;
    let keypoints_path = run.input(&cfg.inputs.keypoints)?;
    let model_path = run.input(&cfg.inputs.model)?;
    let betas_path = run.input(&cfg.inputs.betas)?;
    let mut contact_paths = vec![];
    for o in &cfg.inputs.objects {
        if let Some(side) = o.holder {
            contact_paths.push((side, run.input(&o.mesh)?, run.artifact(run.out.poses(&o.name))?));
        }
    }

    let cameras: Vec<CameraModel> = read_json(&cameras_path)?;
    let keypoints: Vec<KeypointRecord> = read_jsonl(&keypoints_path)?;
    let fused: Vec<FusedRecord> = read_jsonl(&fused_path)?;
    let model = load_model(&model_path)?;
    let betas: Betas = read_json(&betas_path)?;

    let mut frame_ids: Vec<usize> = keypoints.iter().map(|r| r.frame).collect();
    frame_ids.sort_unstable();
    frame_ids.dedup();
    let kp: BTreeMap<(usize, HandSide), &Keypoints2D> = keypoints.iter().map(|r| ((r.frame, r.hand), &r.keypoints)).collect();
    let fz: BTreeMap<(usize, HandSide), &FusedKeypoints3D> = fused.iter().map(|r| ((r.frame, r.hand), &r.fused)).collect();

    struct Prepared {
        model: HandModel,
        beta: Vec<f64>,
        observations: Vec<Option<HandObservation>>,
        contact: Option<(IndexedMesh, Vec<Option<RigidTransform>>)>,
    }
    let mut prepared: [Option<Prepared>; 2] = [None, None];
    for (slot, side) in [HandSide::Left, HandSide::Right].into_iter().enumerate() {
        if !keypoints.iter().any(|r| r.hand == side) {
            continue;
        }
        let observations = frame_ids
            .iter()
            .map(|&f| match (kp.get(&(f, side)), fz.get(&(f, side))) {
                (Some(k), Some(z)) => Ok(Some(HandObservation { keypoints: (*k).clone(), fused: (*z).clone() })),
                (Some(_), None) => Err(CliError::input(&fused_path, format!("no fused record for frame {f}; rerun fuse-keypoints"))),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let beta = betas
            .get(side)
            .cloned()
            .ok_or_else(|| CliError::input(&betas_path, format!("no shape coefficients for the {side:?} hand")))?;
        let contact = match contact_paths.iter().find(|(s, _, _)| *s == side) {
            Some((_, mesh, poses)) => {
                let mesh = IndexedMesh::new(load_mesh(mesh)?);
                let poses = read_poses(poses)?;
                Some((mesh, frame_ids.iter().map(|f| poses.get(f).copied()).collect()))
            }
            None => None,
        };
        prepared[slot] = Some(Prepared { model: model_for(&model, side), beta, observations, contact });
    }

    let weights = cfg.fitting;
    let run_hand = |p: &Option<Prepared>| {
        p.as_ref()
            .map(|p| {
                let input = HandTrackInput {
                    model: &p.model,
                    beta: p.beta.clone(),
                    observations: &p.observations,
                    contact: p.contact.as_ref().map(|(mesh, poses)| ContactTrack { mesh, poses }),
                    init: None,
                };
                fit_hand(&cameras, &input, &weights)
            })
            .transpose()
            .map_err(numeric(stage))
    };
    let (left, right) = rayon::join(|| run_hand(&prepared[0]), || run_hand(&prepared[1]));
    let fit: SequenceFit = assemble(&frame_ids, left?, right?);
    run.write_json(&run.out.fit(), &fit)?;
    let hands = prepared.iter().filter(|p| p.is_some()).count();
    Ok(format!("{hands} hand(s) over {} frames", frame_ids.len()))
}

fn evaluate(run: &mut Run) -> Result<String, CliError> {
    let stage = Stage::Evaluate;
    let cfg = run.config();
    let gt = cfg
        .inputs
        .ground_truth
        .as_ref()
        .ok_or_else(|| CliError::Config("evaluate needs inputs.ground_truth".into()))?;
    let gt_path = run.input(gt)?;
    let model_path = run.input(&cfg.inputs.model)?;
    let fit_path = run.artifact(run.out.fit())?;
    let truth: GroundTruth = read_json(&gt_path)?;
    let mut meshes = vec![];
    for o in &truth.objects {
        let configured = cfg
            .inputs
            .objects
            .iter()
            .find(|c| c.name == o.name)
            .ok_or_else(|| CliError::Config(format!("ground truth object {} is not configured", o.name)))?;
        meshes.push(load_mesh(&run.input(&configured.mesh)?)?);
    }
    let mut objects = vec![];
    for o in &cfg.inputs.objects {
        let reg_path = run.artifact(run.out.registration(&o.name))?;
        let poses_path = run.artifact(run.out.poses(&o.name))?;
        let reg: RegistrationResult = read_json(&reg_path)?;
        let poses = read_poses(&poses_path)?;
        objects.push(ObjectEstimate {
            name: o.name.clone(),
            t_star: Some(reg.t_star),
            poses: truth.frame_ids.iter().map(|f| poses.get(f).copied()).collect(),
        });
    }
    let model = load_model(&model_path)?;
    let fit: SequenceFit = read_json(&fit_path)?;
    let models = [model_for(&model, HandSide::Left), model_for(&model, HandSide::Right)];
    let outputs = PipelineOutputs { fit: Some(fit), objects };
    let report = score_pipeline(&truth, &models, &meshes, &outputs, &cfg.evaluation).map_err(numeric(stage))?;
    run.write_json(&run.out.report(), &report)?;
    let hands: Vec<String> = report.hands.iter().map(|h| format!("{:?} MPJPE {:.2} mm", h.side, h.mpjpe_mm)).collect();
    Ok(if hands.is_empty() { "no fitted hands to score".into() } else { hands.join(", ") })
}

fn synth_error(e: SynthError) -> CliError {
    match e {
        SynthError::InvalidSpec(m) => CliError::Config(m),
        SynthError::Io(e) => e.into(),
        e => CliError::Numeric { stage: "synth", message: e.to_string() },
    }
}

/// Generates a synthetic scene into `out` together with a `config.json`
/// that runs the pipeline on it.
pub fn run_synth(spec_path: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<String, CliError> {
    let mut spec: SceneSpec = match spec_path {
        Some(p) => read_json(p)?,
        None => SceneSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let bundle = generate(&spec).map_err(synth_error)?;
    let layout = SceneLayout::new(out);
    bundle.write(&layout).map_err(synth_error)?;
    let objects: Vec<(String, HandSide)> = spec.objects.iter().map(|o| (o.name.clone(), o.holder)).collect();
    let config = PipelineConfig::for_scene(&layout, &objects, spec.seed);
    write_json(&out.join("config.json"), &config)?;

    let mut record = StageRecord { seed: spec.seed, ..Default::default() };
    record.config_sha256 = sha256_hex(&serde_json::to_vec(&spec).expect("serialisable spec"));
    if let Some(p) = spec_path {
        let name = p.file_name().map(|n| key(Path::new(n))).unwrap_or_default();
        record.inputs.insert(name, sha256_file(p)?);
    }
    let manifest = out.join("manifest.json");
    for entry in WalkDir::new(out).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::input(out, e))?;
        let f = entry.path();
        if entry.file_type().is_file() && f != manifest {
            record.outputs.insert(key(f.strip_prefix(out).unwrap_or(f)), sha256_file(f)?);
        }
    }
    Manifest::record(&manifest, "synth", record)?;
    Ok(format!(
        "{} frames, {} cameras, {} hand(s), {} object(s)",
        spec.frames,
        spec.cameras.count,
        bundle.truth.hands.len(),
        spec.objects.len()
    ))
}
