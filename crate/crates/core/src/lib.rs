//! Hindsight traversability labels and bird's-eye-view grid-map tooling.
//!
//! The crate covers the deterministic parts of a camera/LiDAR BEV
//! traversability pipeline: frames and point-cloud preparation
//! ([`geometry`]), grid maps ([`gridmap`]), hindsight pseudo ground truth
//! ([`hindsight`]), lifting and rasterization geometry ([`bevlift`]),
//! output processing and loss weights ([`postproc`]), evaluation
//! ([`metrics`]) and a synthetic world with exact ground truth
//! ([`synthworld`]). On-disk formats live in [`io`].

// `!(a < b)` is how validation rejects NaN alongside out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bevlift;
pub mod error;
pub mod geometry;
pub mod gridmap;
pub mod hindsight;
pub mod io;
pub mod metrics;
pub mod postproc;
pub mod synthworld;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, PointCloud, Pose2, Pose3, Trajectory};
pub use gridmap::{GridMap, GridSpec, Layer};
