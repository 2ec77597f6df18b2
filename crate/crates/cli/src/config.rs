use std::path::{Path, PathBuf};

use hoa_core::fitting::FittingWeights;
use hoa_core::fusion::{FusionConfig, DEFAULT_RADIUS_PX};
use hoa_core::hand::HandSide;
use hoa_core::io::read_json;
use hoa_core::calib::DEFAULT_MAX_GAP_MS;
use hoa_core::registration::RegistrationConfig;
use hoa_core::synth::{ScoreOptions, SceneLayout, CAMERA_SENSOR, MOCAP_SENSOR};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// The single configuration file. Relative paths are taken relative to the
/// directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub inputs: InputPaths,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub fusion: FusionSettings,
    #[serde(default)]
    pub registration: RegistrationConfig,
    #[serde(default)]
    pub fitting: FittingWeights,
    #[serde(default)]
    pub sync: SyncSettings,
    #[serde(default)]
    pub evaluation: ScoreOptions,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub intrinsics: PathBuf,
    pub calibration: PathBuf,
    pub timestamps: PathBuf,
    pub keypoints: PathBuf,
    pub model: PathBuf,
    pub betas: PathBuf,
    #[serde(default)]
    pub objects: Vec<ObjectPaths>,
    /// Only needed by `evaluate`.
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectPaths {
    pub name: String,
    /// Hand whose fit uses this object for the contact terms.
    pub holder: Option<HandSide>,
    pub mesh: PathBuf,
    pub rig: PathBuf,
    pub init: PathBuf,
    pub markers: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSettings {
    pub radius_px: f64,
    pub iterations: usize,
    pub refine: bool,
}

impl Default for FusionSettings {
    fn default() -> Self {
        let d = FusionConfig::default();
        Self { radius_px: d.radius_px, iterations: d.iterations, refine: d.refine }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSettings {
    pub max_gap_ms: i64,
    /// Sensor whose frames index the sequence.
    pub reference: String,
    /// Sensor carrying the marker tracks.
    pub mocap: String,
}

impl Default for SyncSettings {
    fn default() -> Self {
        Self { max_gap_ms: DEFAULT_MAX_GAP_MS, reference: CAMERA_SENSOR.into(), mocap: MOCAP_SENSOR.into() }
    }
}

impl PipelineConfig {
    /// Configuration pointing at the files of a generated scene, with paths
    /// relative to the scene root.
    pub fn for_scene(layout: &SceneLayout, objects: &[(String, HandSide)], seed: u64) -> Self {
        let rel = |p: PathBuf| p.strip_prefix(&layout.root).map(Path::to_path_buf).unwrap_or(p);
        Self {
            seed,
            inputs: InputPaths {
                intrinsics: rel(layout.intrinsics()),
                calibration: rel(layout.calibration()),
                timestamps: rel(layout.timestamps()),
                keypoints: rel(layout.keypoints()),
                model: rel(layout.model()),
                betas: rel(layout.betas()),
                objects: objects
                    .iter()
                    .map(|(name, holder)| ObjectPaths {
                        name: name.clone(),
                        holder: Some(*holder),
                        mesh: rel(layout.mesh(name)),
                        rig: rel(layout.rig(name)),
                        init: rel(layout.init(name)),
                        markers: rel(layout.markers(name)),
                    })
                    .collect(),
                ground_truth: Some(rel(layout.ground_truth())),
            },
            output: default_output(),
            fusion: FusionSettings::default(),
            registration: RegistrationConfig::default(),
            fitting: FittingWeights::default(),
            sync: SyncSettings::default(),
            evaluation: ScoreOptions::default(),
        }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            radius_px: self.fusion.radius_px,
            iterations: self.fusion.iterations,
            refine: self.fusion.refine,
            seed: self.seed,
        }
    }

    /// Checks the numeric preconditions of every stage.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(self.fusion.radius_px > 0.0 && self.fusion.radius_px.is_finite()) {
            return bad(format!("fusion.radius_px must be positive (default {DEFAULT_RADIUS_PX})"));
        }
        let r = &self.registration;
        if !(r.alpha > 0.0 && r.lr > 0.0 && r.rel_tol >= 0.0) {
            return bad("registration.alpha and registration.lr must be positive, rel_tol non-negative".into());
        }
        if self.sync.max_gap_ms < 0 {
            return bad("sync.max_gap_ms must be non-negative".into());
        }
        let e = &self.evaluation;
        if !(e.voxel > 0.0 && e.contact_threshold >= 0.0) {
            return bad("evaluation.voxel must be positive and contact_threshold non-negative".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for o in &self.inputs.objects {
            if o.name.is_empty() || o.name.contains(['/', '\\']) || o.name == "." || o.name == ".." {
                return bad(format!("object name {:?} is not a plain file name", o.name));
            }
            if !names.insert(&o.name) {
                return bad(format!("object {} is listed twice", o.name));
            }
        }
        self.fitting.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}

/// A configuration together with the directory its paths are relative to
/// and the output directory in effect.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base: PathBuf,
    pub output: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let config: PipelineConfig = read_json(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::new(config, base))
    }

    pub fn new(config: PipelineConfig, base: PathBuf) -> Self {
        let output = base.join(&config.output);
        Self { config, base, output }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base.join(path)
    }
}
