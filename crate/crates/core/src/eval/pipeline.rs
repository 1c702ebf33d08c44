//! Replays a dataset through tracker, coordinator and estimator.
//!
//! [`run_playback`] advances a simulated clock in back-end ticks and is fully
//! deterministic. [`run_streaming`] replays in (scaled) wall-clock time with
//! one producer thread per camera plus one for the IMU.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, RecvTimeoutError};
use log::{debug, info};

use crate::backend::estimator::{Estimator, Initializer, OdometryRecord};
use crate::backend::state::CameraExtrinsics;
use crate::backend::window::InitMode;
use crate::coordinator::{Coordinator, CoordinatorConfig, FrameMeasurement, SharedCoordinator};
use crate::error::{Error, Result};
use crate::sim::camera::Tracker;
use crate::sim::{Dataset, ScenarioConfig};

/// Which sensors and front-end policy a run uses.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    /// All cameras, budgets allocated by tracked counts.
    Proposed,
    /// All cameras, fixed equal budgets.
    NoAllocation,
    /// One camera only.
    Single(u32),
}

impl Variant {
    /// Parses `proposed`, `no_alloc` or `single:<camera name or id>`.
    pub fn parse(s: &str, config: &ScenarioConfig) -> Result<Self> {
        match s {
            "proposed" => Ok(Variant::Proposed),
            "no_alloc" => Ok(Variant::NoAllocation),
            _ => {
                let Some(cam) = s.strip_prefix("single:") else {
                    return Err(Error::Config(format!(
                        "unknown variant {s:?} (expected proposed, no_alloc or single:<camera>)"
                    )));
                };
                config
                    .cameras
                    .iter()
                    .find(|c| c.name == cam || c.id.to_string() == cam)
                    .map(|c| Variant::Single(c.id))
                    .ok_or_else(|| Error::Config(format!("variant {s:?}: no camera named {cam:?}")))
            }
        }
    }

    pub fn name(&self, config: &ScenarioConfig) -> String {
        match self {
            Variant::Proposed => "proposed".into(),
            Variant::NoAllocation => "no_alloc".into(),
            Variant::Single(id) => {
                let name = config.camera(*id).map_or_else(|| id.to_string(), |c| c.name.clone());
                format!("single:{name}")
            }
        }
    }

    /// Variants used when a scenario does not list its own.
    pub fn defaults(config: &ScenarioConfig) -> Vec<Variant> {
        let mut v = vec![Variant::Proposed, Variant::NoAllocation];
        v.extend(config.cameras.iter().map(|c| Variant::Single(c.id)));
        v
    }

    pub fn cameras(&self, config: &ScenarioConfig) -> Vec<u32> {
        match self {
            Variant::Single(id) => vec![*id],
            _ => config.camera_ids(),
        }
    }

    fn coordinator_config(&self, base: &CoordinatorConfig) -> CoordinatorConfig {
        CoordinatorConfig {
            allocate: !matches!(self, Variant::NoAllocation) && base.allocate,
            ..*base
        }
    }
}

/// Budgets of every camera at one back-end tick.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSample {
    pub time: f64,
    pub budgets: Vec<(u32, usize)>,
}

#[derive(Clone, Debug, Default)]
pub struct RunResult {
    pub odometry: Vec<OdometryRecord>,
    pub fn_trace: Vec<BudgetSample>,
    /// The estimator produced a non-finite state.
    pub failed: bool,
    pub frames_processed: usize,
    pub frames_rejected: usize,
    pub frames_dropped: usize,
    /// Final time-offset estimate per camera.
    pub time_offsets: BTreeMap<u32, f64>,
    pub runtime_s: f64,
}

fn build_estimator(dataset: &Dataset, cameras: &[u32]) -> Result<Estimator> {
    let config = &dataset.config;
    let models = cameras
        .iter()
        .map(|id| config.camera(*id).map(|c| c.camera_model()).ok_or(Error::UnknownCamera(*id)))
        .collect::<Result<Vec<_>>>()?;
    let init = match config.backend.init_mode {
        InitMode::Oracle => Initializer::Oracle(dataset.ground_truth.clone()),
        InitMode::Static => Initializer::Static,
    };
    Estimator::new(config.backend, config.imu.noise(), models, init)
}

fn handle(result: &mut RunResult, outcome: Result<Option<OdometryRecord>>) -> Result<()> {
    match outcome {
        Ok(_) => {
            result.frames_processed += 1;
            Ok(())
        }
        Err(Error::OutOfOrderFrame { .. } | Error::ImuGap { .. }) => {
            result.frames_rejected += 1;
            Ok(())
        }
        Err(e) => Err(e),
    }
}

fn finish(result: &mut RunResult, estimator: &mut Estimator, coordinator: &Coordinator, started: Instant) {
    result.odometry = estimator.take_odometry();
    result.failed = estimator.has_failed();
    result.frames_dropped = coordinator.stats().iter().map(|s| s.dropped as usize).sum();
    result.time_offsets = estimator
        .window()
        .cameras
        .iter()
        .map(|(id, c)| (*id, c.extrinsics.time_offset))
        .collect();
    result.runtime_s = started.elapsed().as_secs_f64();
}

/// Slack for frames stamped on a tick boundary.
const TICK_EPS: f64 = 1e-9;

/// Deterministic replay: at every back-end tick, frames captured up to the
/// tick are tracked and submitted, then the coordinator forwards at most
/// one frame to the estimator.
pub fn run_playback(dataset: &Dataset, variant: &Variant) -> Result<RunResult> {
    let started = Instant::now();
    let config = &dataset.config;
    let cameras = variant.cameras(config);
    let mut estimator = build_estimator(dataset, &cameras)?;
    let mut coordinator = Coordinator::new(variant.coordinator_config(&config.coordinator), &cameras, 0.0)?;
    let mut trackers: BTreeMap<u32, Tracker> = cameras
        .iter()
        .map(|&id| (id, Tracker::new(config.seed ^ (id as u64) << 32)))
        .collect();
    let frames: Vec<_> = dataset.frames.iter().filter(|f| cameras.contains(&f.camera_id)).collect();
    let tick = 1.0 / config.evaluation.backend_rate;
    let end = dataset.imu.last().map_or(0.0, |s| s.timestamp);
    let lookahead = CameraExtrinsics::MAX_TIME_OFFSET;

    let mut result = RunResult::default();
    let (mut next_frame, mut next_imu) = (0usize, 0usize);
    let mut k = 0u64;
    loop {
        let now = k as f64 * tick;
        if now > end + tick {
            break;
        }
        k += 1;
        while next_frame < frames.len() && frames[next_frame].timestamp <= now + TICK_EPS {
            let raw = frames[next_frame];
            next_frame += 1;
            let budget = coordinator.budget(raw.camera_id)?;
            let m = trackers.get_mut(&raw.camera_id).expect("tracker per camera").track(raw, budget);
            coordinator.submit_frame(m)?;
        }
        result.fn_trace.push(BudgetSample {
            time: now,
            budgets: coordinator.stats().iter().map(|s| (s.camera_id, s.budget)).collect(),
        });
        while next_imu < dataset.imu.len() && dataset.imu[next_imu].timestamp <= now + lookahead {
            estimator.push_imu(dataset.imu[next_imu]);
            next_imu += 1;
        }
        if let Some(frame) = coordinator.select_next_frame(now) {
            let outcome = estimator.process_frame(&frame);
            handle(&mut result, outcome)?;
        }
    }
    finish(&mut result, &mut estimator, &coordinator, started);
    debug!(
        "playback {}: {} frames processed, {} rejected, {} dropped",
        variant.name(config),
        result.frames_processed,
        result.frames_rejected,
        result.frames_dropped
    );
    Ok(result)
}

/// Wall-clock replay at `speed` times real time.
pub fn run_streaming(dataset: &Dataset, variant: &Variant, speed: f64) -> Result<RunResult> {
    if !(speed > 0.0) {
        return Err(Error::Config("streaming speed must be positive".into()));
    }
    let started = Instant::now();
    let config = &dataset.config;
    let cameras = variant.cameras(config);
    let mut estimator = build_estimator(dataset, &cameras)?;
    let shared = SharedCoordinator::new(Coordinator::new(
        variant.coordinator_config(&config.coordinator),
        &cameras,
        0.0,
    )?);
    let sim_now = move || started.elapsed().as_secs_f64() * speed;
    let wait_until = move |t: f64| {
        let now = sim_now();
        if t > now {
            std::thread::sleep(Duration::from_secs_f64((t - now) / speed));
        }
    };
    let tick = 1.0 / config.evaluation.backend_rate;
    let end = dataset.imu.last().map_or(0.0, |s| s.timestamp);
    let mut result = RunResult::default();

    std::thread::scope(|scope| -> Result<()> {
        let (imu_tx, imu_rx) = unbounded();
        scope.spawn(move || {
            for s in &dataset.imu {
                wait_until(s.timestamp);
                if imu_tx.send(*s).is_err() {
                    break;
                }
            }
        });
        for &id in &cameras {
            let shared = shared.clone();
            scope.spawn(move || -> Result<()> {
                let mut tracker = Tracker::new(config.seed ^ (id as u64) << 32);
                for raw in dataset.frames_of(id) {
                    wait_until(raw.timestamp);
                    let budget = shared.budget(id)?;
                    shared.submit_frame(tracker.track(raw, budget))?;
                }
                Ok(())
            });
        }

        let mut k = 0u64;
        let mut imu_open = true;
        loop {
            let now = k as f64 * tick;
            if now > end + tick {
                break;
            }
            k += 1;
            wait_until(now);
            while let Ok(s) = imu_rx.try_recv() {
                estimator.push_imu(s);
            }
            result.fn_trace.push(BudgetSample {
                time: now,
                budgets: shared.stats().iter().map(|s| (s.camera_id, s.budget)).collect(),
            });
            let Some(frame): Option<FrameMeasurement> = shared.select_next_frame(now) else { continue };
            // Wait for the IMU to cover the frame.
            let td = estimator.window().time_offset(frame.camera_id);
            while imu_open && estimator.latest_imu_time().is_none_or(|t| t < frame.timestamp + td) {
                match imu_rx.recv_timeout(Duration::from_secs(1)) {
                    Ok(s) => {
                        estimator.push_imu(s);
                    }
                    Err(RecvTimeoutError::Timeout) => continue,
                    Err(RecvTimeoutError::Disconnected) => imu_open = false,
                }
            }
            let outcome = estimator.process_frame(&frame);
            handle(&mut result, outcome)?;
        }
        Ok(())
    })?;
    shared.with(|c| finish(&mut result, &mut estimator, c, started));
    info!(
        "streaming {}: {} frames processed in {:.1} s",
        variant.name(config),
        result.frames_processed,
        result.runtime_s
    );
    Ok(result)
}
