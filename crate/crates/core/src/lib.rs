//! Asynchronous multi-camera visual-inertial state estimation.
//!
//! The crate is organized along the data path:
//!
//! - [`manifold`]: rotations and rigid transforms.
//! - [`imu`]: pre-integration, the IMU factor and high-rate propagation.
//! - [`coordinator`]: feature budget allocation and frame forwarding.
//! - [`backend`]: the sliding-window estimator.
//! - [`sim`]: deterministic synthetic worlds, sensors and scenarios.
//! - [`eval`]: trajectory metrics, the replay pipeline and benchmarks.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod coordinator;
pub mod eval;
pub mod error;
pub mod imu;
pub mod manifold;
pub mod sim;

pub use error::{Error, Result};
