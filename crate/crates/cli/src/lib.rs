//! Stage runner behind the `hoa` command.
//!
//! Every stage reads its inputs from files named in a [`PipelineConfig`] or
//! written by an upstream stage into the output directory, writes its own
//! artifacts there and records input and output hashes in `manifest.json`.

mod config;
mod manifest;
mod stages;

use std::path::{Path, PathBuf};

use hoa_core::io::IoError;
use thiserror::Error;

pub use config::{FusionSettings, InputPaths, LoadedConfig, ObjectPaths, PipelineConfig, SyncSettings};
pub use manifest::{sha256_file, Manifest, StageRecord};
pub use stages::{
    fuse_records, run_all, run_stage, run_synth, CalibrationReport, FramePair, OutputLayout, PoseRecord, Stage, SyncResult,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error(transparent)]
    Io(IoError),
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Numeric { stage: &'static str, message: String },
}

impl CliError {
    /// 1 for numeric failures inside a stage, 2 for I/O, schema and
    /// configuration problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn input(path: &Path, message: impl ToString) -> Self {
        CliError::Input { path: path.to_path_buf(), message: message.to_string() }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if e.is_missing() {
            CliError::MissingInput(e.path().to_path_buf())
        } else {
            CliError::Io(e)
        }
    }
}
