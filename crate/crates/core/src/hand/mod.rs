//! Parametric articulated hand.
//!
//! A MANO-compatible formulation: shape blend shapes on a template mesh, a
//! 16-joint kinematic tree posed by axis-angle rotations, linear blend
//! skinning, and a regressor from posed vertices to 21 output joints. The
//! output joints are the 16 kinematic joints followed by the fingertips of
//! the index, middle, pinky, ring and thumb fingers.

mod format;
mod model;
mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

pub use format::MODEL_MAGIC;
pub use model::{HandJacobian, HandModel, Posed, Shaped};
pub use synthetic::MIN_SYNTHETIC_VERTICES;

pub const NUM_KINEMATIC_JOINTS: usize = 16;
pub const NUM_OUTPUT_JOINTS: usize = 21;
pub const NUM_BETAS: usize = 10;
pub const NUM_THETA: usize = 3 * NUM_KINEMATIC_JOINTS;
/// Articulation components (all of θ except the global rotation).
pub const NUM_ARTICULATION: usize = NUM_THETA - 3;
/// Pose parameters per hand: θ followed by t.
pub const NUM_POSE_PARAMS: usize = NUM_THETA + 3;

/// Kinematic tree: wrist, then index, middle, pinky, ring and thumb chains of
/// three joints each.
pub const PARENTS: [Option<usize>; NUM_KINEMATIC_JOINTS] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(0),
    Some(4),
    Some(5),
    Some(0),
    Some(7),
    Some(8),
    Some(0),
    Some(10),
    Some(11),
    Some(0),
    Some(13),
    Some(14),
];

#[derive(Debug, Error)]
pub enum HandError {
    #[error("model file: {0}")]
    Parse(String),
    #[error("model invariant violated: {0}")]
    InvariantViolation(String),
    #[error("pose parameters: {0}")]
    InvalidParams(String),
    #[error("synthetic model needs at least {MIN_SYNTHETIC_VERTICES} vertices, got {0}")]
    TooFewVertices(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandSide {
    Left,
    Right,
}

impl HandSide {
    pub fn other(self) -> Self {
        match self {
            HandSide::Left => HandSide::Right,
            HandSide::Right => HandSide::Left,
        }
    }
}

/// `{θ, β, t}`: 16 axis-angle triples (global rotation first), 10 shape
/// coefficients and the translation in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPoseParams {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub t: [f64; 3],
}

impl Default for HandPoseParams {
    fn default() -> Self {
        Self { theta: vec![0.0; NUM_THETA], beta: vec![0.0; NUM_BETAS], t: [0.0; 3] }
    }
}

impl HandPoseParams {
    pub fn validate(&self) -> Result<(), HandError> {
        if self.theta.len() != NUM_THETA {
            return Err(HandError::InvalidParams(format!("theta has {} entries, expected {NUM_THETA}", self.theta.len())));
        }
        if self.beta.len() != NUM_BETAS {
            return Err(HandError::InvalidParams(format!("beta has {} entries, expected {NUM_BETAS}", self.beta.len())));
        }
        if !self.theta.iter().chain(&self.beta).chain(&self.t).all(|v| v.is_finite()) {
            return Err(HandError::InvalidParams("non-finite value".into()));
        }
        Ok(())
    }

    pub fn joint_rotation(&self, j: usize) -> Vec3 {
        Vec3::new(self.theta[3 * j], self.theta[3 * j + 1], self.theta[3 * j + 2])
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::from(self.t)
    }

    /// θ followed by t.
    pub fn pose_vector(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        v.extend_from_slice(&self.t);
        v
    }

    pub fn with_pose_vector(&self, pose: &[f64]) -> Self {
        assert_eq!(pose.len(), NUM_POSE_PARAMS);
        Self { theta: pose[..NUM_THETA].to_vec(), beta: self.beta.clone(), t: [pose[48], pose[49], pose[50]] }
    }

    /// The same pose expressed for a model mirrored through the x = 0 plane.
    pub fn mirrored(&self) -> Self {
        let theta = self.theta.chunks(3).flat_map(|w| [w[0], -w[1], -w[2]]).collect();
        Self { theta, beta: self.beta.clone(), t: [-self.t[0], self.t[1], self.t[2]] }
    }
}

/// Output of the forward map: 21 joints and the skinned surface vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    pub joints: Vec<Vec3>,
    pub vertices: Vec<Vec3>,
}
