//! Rigid transforms, camera projection, triangulation, point-set alignment,
//! nearest-vertex queries and voxelised mesh volumes.

mod align;
mod camera;
mod mesh;
mod spatial;
mod transform;
mod triangulate;
mod voxel;

pub use align::{alignment_rms, rigid_align, Similarity};
pub use camera::{CameraModel, Intrinsics, Vec2, MIN_DEPTH};
pub use mesh::{IndexedMesh, TriMesh, NORMAL_TOL};
pub use spatial::{brute_force_nearest, Nearest, SpatialIndex};
pub use transform::{
    project_to_so3, rotation_angle, skew, so3_exp, so3_left_jacobian, so3_log, Mat3, RigidTransform, Vec3,
    ORTHONORMAL_TOL,
};
pub use triangulate::{triangulate_pair, triangulate_views, MIN_BASELINE, MIN_RAY_ANGLE_DEG};
pub use voxel::{voxel_intersection_volume, voxel_volume, MAX_INCONSISTENT_FRACTION};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point has non-positive depth {depth} in the camera frame")]
    NonPositiveDepth { depth: f64 },
    #[error("camera centres coincide (baseline {baseline} m)")]
    DegenerateBaseline { baseline: f64 },
    #[error("rays are nearly parallel ({angle_deg}°)")]
    NearParallelRays { angle_deg: f64 },
    #[error("source points are collinear or coincident")]
    RankDeficient,
    #[error("spatial index is empty")]
    EmptyIndex,
    #[error("mesh is not closed: {:.2}% of voxels disagree between axes", inconsistent_fraction * 100.0)]
    OpenMesh { inconsistent_fraction: f64 },
    #[error("voxel size must be positive and finite, got {0}")]
    InvalidVoxel(f64),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("matrix is not a rotation (|RᵀR - I| = {orthogonality:e}, det = {determinant})")]
    NotARotation { orthogonality: f64, determinant: f64 },
    #[error("non-finite value")]
    NonFinite,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
