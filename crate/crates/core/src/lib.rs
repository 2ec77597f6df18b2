//! Multi-view hand-object pose annotation.
//!
//! The crate reconstructs rigid object poses from tracked surface markers and
//! articulated hand poses from multi-view 2D keypoints, and provides the
//! evaluation metrics used to score the results against ground truth.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod geometry;
pub mod calib;
pub mod io;
pub mod fusion;
pub mod optim;
pub mod registration;
pub mod hand;
pub mod fitting;
pub mod metrics;
pub mod synth;
