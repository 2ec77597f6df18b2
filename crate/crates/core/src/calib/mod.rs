//! Camera extrinsic calibration from marker correspondences and
//! nearest-timestamp synchronisation of sensor streams.

mod pnp;
mod sync;

pub use pnp::{solve_extrinsic, CalibrationObservation, ExtrinsicSolution, COPLANAR_TOL};
pub use sync::{match_streams, MatchedPair, TimestampRecord, TimestampStream, DEFAULT_MAX_GAP_MS};

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("need at least 4 observations, got {got}")]
    InsufficientObservations { got: usize },
    #[error("degenerate marker configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("pixel {pixel:?} lies outside the image")]
    PixelOutOfBounds { pixel: [f64; 2] },
    #[error("timestamps of {sensor_id} are not strictly increasing at index {index}")]
    NonMonotonicTimestamps { sensor_id: String, index: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
