//! Frame-by-frame driver around the window: initialization, IMU buffering,
//! optimization and odometry output.

use std::collections::VecDeque;

use log::debug;
use nalgebra::Vector3;

use crate::backend::solver::{optimize, reject_outliers, SolveReport};
use crate::backend::state::{ImuState, STATE_DIM};
use crate::backend::window::{BackendConfig, CameraModel, InitMode, InsertReport, Window};
use crate::coordinator::FrameMeasurement;
use crate::error::{Error, Result};
use crate::imu::{HighRatePropagator, ImuNoiseParams, ImuSample};
use crate::manifold::Rotation;

/// Length of the rest period assumed by static initialization.
pub const STATIC_INIT_SPAN: f64 = 0.5;

const ORACLE_SIGMAS: [f64; STATE_DIM] = [
    1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2, 1e-3, 1e-3, 1e-3,
];
const STATIC_SIGMAS: [f64; STATE_DIM] = [
    1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 1e-2, 1e-2, 1e-2, 0.1, 0.1, 0.1, 5e-3, 5e-3, 5e-3,
];

/// An optimized state handed to consumers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryRecord {
    pub timestamp: f64,
    pub camera_id: u32,
    pub state: ImuState,
}

/// Source of the first node's state.
#[derive(Clone, Debug)]
pub enum Initializer {
    /// Ground-truth states sorted by time; the first node is interpolated.
    Oracle(Vec<ImuState>),
    Static,
}

impl Initializer {
    pub fn mode(&self) -> InitMode {
        match self {
            Initializer::Oracle(_) => InitMode::Oracle,
            Initializer::Static => InitMode::Static,
        }
    }
}

/// Interpolates a time-sorted state sequence at `t`.
pub fn interpolate_states(states: &[ImuState], t: f64) -> Option<ImuState> {
    let i = states.partition_point(|s| s.timestamp < t);
    if i < states.len() && states[i].timestamp == t {
        return Some(states[i]);
    }
    if i == 0 || i == states.len() {
        return None;
    }
    let (a, b) = (&states[i - 1], &states[i]);
    let s = (t - a.timestamp) / (b.timestamp - a.timestamp);
    let lerp = |x: &Vector3<f64>, y: &Vector3<f64>| x + (y - x) * s;
    Some(ImuState {
        timestamp: t,
        position: lerp(&a.position, &b.position),
        velocity: lerp(&a.velocity, &b.velocity),
        orientation: a.orientation.plus(&(b.orientation.minus(&a.orientation) * s)),
        bias_accel: lerp(&a.bias_accel, &b.bias_accel),
        bias_gyro: lerp(&a.bias_gyro, &b.bias_gyro),
    })
}

/// Level, zero-yaw state at rest estimated from IMU samples: gravity
/// direction from the mean specific force and gyro bias from the mean rate.
pub fn static_initial_state(samples: &[ImuSample], t: f64) -> Option<ImuState> {
    if samples.len() < 2 {
        return None;
    }
    let n = samples.len() as f64;
    let acc: Vector3<f64> = samples.iter().map(|s| s.accel).sum::<Vector3<f64>>() / n;
    let gyro: Vector3<f64> = samples.iter().map(|s| s.gyro).sum::<Vector3<f64>>() / n;
    // At rest the accelerometer reads Rᵀ·(0, 0, g).
    let up = acc.normalize();
    let tilt = nalgebra::UnitQuaternion::rotation_between(&up, &Vector3::z()).unwrap_or_else(nalgebra::UnitQuaternion::identity);
    let (roll, pitch, yaw) = tilt.euler_angles();
    let _ = yaw;
    Some(ImuState {
        timestamp: t,
        orientation: Rotation::from_euler_zyx(0.0, pitch, roll),
        bias_gyro: gyro,
        ..Default::default()
    })
}

#[derive(Clone, Debug, Default)]
pub struct EstimatorStats {
    pub frames: usize,
    pub inserted: usize,
    pub out_of_order: usize,
    pub imu_gaps: usize,
    pub singular_solves: usize,
    pub last_solve: SolveReport,
}

pub struct Estimator {
    window: Window,
    initializer: Initializer,
    imu: VecDeque<ImuSample>,
    first_imu_time: Option<f64>,
    propagator: HighRatePropagator,
    odometry: Vec<OdometryRecord>,
    failed: bool,
    pub stats: EstimatorStats,
}

impl Estimator {
    pub fn new(
        config: BackendConfig,
        noise: ImuNoiseParams,
        cameras: Vec<CameraModel>,
        initializer: Initializer,
    ) -> Result<Self> {
        let window = Window::new(config, noise, cameras)?;
        let propagator = HighRatePropagator::new(window.gravity);
        Ok(Self {
            window,
            initializer,
            imu: VecDeque::new(),
            first_imu_time: None,
            propagator,
            odometry: Vec::new(),
            failed: false,
            stats: EstimatorStats::default(),
        })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn window_mut(&mut self) -> &mut Window {
        &mut self.window
    }

    pub fn is_initialized(&self) -> bool {
        !self.window.is_empty()
    }

    /// True once the optimizer produced a non-finite state.
    pub fn has_failed(&self) -> bool {
        self.failed
    }

    pub fn odometry(&self) -> &[OdometryRecord] {
        &self.odometry
    }

    pub fn take_odometry(&mut self) -> Vec<OdometryRecord> {
        std::mem::take(&mut self.odometry)
    }

    /// Adds an IMU sample and returns the high-rate state it produces, if
    /// an optimized state is available.
    pub fn push_imu(&mut self, sample: ImuSample) -> Option<ImuState> {
        if self.imu.back().is_some_and(|s| s.timestamp >= sample.timestamp) {
            return None;
        }
        self.first_imu_time.get_or_insert(sample.timestamp);
        self.imu.push_back(sample);
        self.propagator.push(sample)
    }

    pub fn latest_imu_time(&self) -> Option<f64> {
        self.imu.back().map(|s| s.timestamp)
    }

    /// Latest high-rate state.
    pub fn latest_high_rate(&self) -> Option<&ImuState> {
        self.propagator.latest()
    }

    fn initial_state(&self, t: f64) -> Option<ImuState> {
        match &self.initializer {
            Initializer::Oracle(states) => interpolate_states(states, t),
            Initializer::Static => {
                let t0 = self.first_imu_time?;
                if t < t0 + STATIC_INIT_SPAN {
                    return None;
                }
                let rest: Vec<ImuSample> = self
                    .imu
                    .iter()
                    .filter(|s| s.timestamp <= t0 + STATIC_INIT_SPAN)
                    .copied()
                    .collect();
                static_initial_state(&rest, t)
            }
        }
    }

    /// Inserts a frame, optimizes and returns the new odometry record.
    /// Frames that cannot be used yet (before initialization, late frames,
    /// missing IMU) return `Ok(None)` or a non-fatal error.
    pub fn process_frame(&mut self, frame: &FrameMeasurement) -> Result<Option<OdometryRecord>> {
        self.stats.frames += 1;
        if self.failed {
            return Ok(None);
        }
        if !self.is_initialized() {
            let td = self.window.camera(frame.camera_id)?.extrinsics.time_offset;
            let t = frame.timestamp + td;
            let Some(state) = self.initial_state(t) else { return Ok(None) };
            let sigmas = match self.initializer.mode() {
                InitMode::Oracle => &ORACLE_SIGMAS,
                InitMode::Static => &STATIC_SIGMAS,
            };
            self.window.insert_first(frame, state, sigmas)?;
            self.stats.inserted += 1;
            return Ok(None);
        }
        let imu: Vec<ImuSample> = self.imu.iter().copied().collect();
        let report: InsertReport = match self.window.insert_frame(frame, &imu) {
            Ok(r) => r,
            Err(e @ Error::OutOfOrderFrame { .. }) => {
                self.stats.out_of_order += 1;
                return Err(e);
            }
            Err(e @ Error::ImuGap { .. }) => {
                self.stats.imu_gaps += 1;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        self.stats.inserted += 1;
        self.window.reintegrate_stale_edges()?;
        let solve = optimize(&mut self.window);
        if solve.singular {
            self.stats.singular_solves += 1;
        }
        self.stats.last_solve = solve;
        reject_outliers(&mut self.window);

        let newest = self.window.newest().expect("window not empty");
        let (state, camera_id) = (newest.state, newest.camera_id);
        let finite = state.position.iter().all(|v| v.is_finite())
            && state.velocity.iter().all(|v| v.is_finite());
        if !finite {
            self.failed = true;
            return Ok(None);
        }
        debug!(
            "node {} cam {} kf {} landmarks {} cost {:.3e}->{:.3e} it {}",
            report.node,
            camera_id,
            report.keyframe,
            self.window.landmarks().len(),
            solve.initial_cost,
            solve.final_cost,
            solve.iterations
        );
        self.prune_imu();
        self.propagator.rebase(state);
        let record = OdometryRecord {
            timestamp: state.timestamp,
            camera_id,
            state,
        };
        self.odometry.push(record);
        Ok(Some(record))
    }

    fn prune_imu(&mut self) {
        let Some(oldest) = self.window.nodes().first() else { return };
        let t = oldest.state.timestamp;
        while self.imu.len() > 2 && self.imu[1].timestamp < t {
            self.imu.pop_front();
        }
    }
}
