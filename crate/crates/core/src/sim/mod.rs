//! Deterministic synthetic environment: trajectories, landmark worlds,
//! IMU and camera synthesis, fault injection and recorded datasets.

pub mod camera;
pub mod dataset;
pub mod sensors;
pub mod trajectory;
pub mod world;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::estimator::interpolate_states;
use crate::backend::state::ImuState;
use crate::backend::window::BackendConfig;
use crate::coordinator::CoordinatorConfig;
use crate::error::{Error, Result};
use crate::eval::EvaluationConfig;
use crate::imu::ImuSample;

pub use camera::{Mount, RawFrame, SimCameraSpec, Tracker};
pub use dataset::Dataset;
pub use sensors::{Availability, FaultEvent, FaultScript, ImuSimSpec};
pub use trajectory::{PathSpec, Trajectory, TrajectorySpec};
pub use world::{World, WorldSpec};

/// Everything needed to generate and evaluate one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// [s]
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub imu: ImuSimSpec,
    pub world: WorldSpec,
    pub cameras: Vec<SimCameraSpec>,
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
    #[serde(default)]
    pub coordinator: CoordinatorConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Config("duration must be positive".into()));
        }
        if self.cameras.is_empty() {
            return Err(Error::Config("at least one camera is required".into()));
        }
        let mut ids: Vec<u32> = self.cameras.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("camera ids must be unique".into()));
        }
        let mut names: Vec<&str> = self.cameras.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("camera names must be unique".into()));
        }
        self.trajectory.validate()?;
        self.imu.validate()?;
        self.world.validate()?;
        for c in &self.cameras {
            c.validate()?;
        }
        FaultScript::new(self.faults.clone()).validate(self.duration, &ids)?;
        self.coordinator.validate()?;
        self.backend.validate()?;
        self.evaluation.validate()?;
        Ok(())
    }

    pub fn camera_ids(&self) -> Vec<u32> {
        self.cameras.iter().map(|c| c.id).collect()
    }

    pub fn camera(&self, id: u32) -> Option<&SimCameraSpec> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Independent random stream per purpose so that adding a camera does not
/// change the IMU noise.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const WORLD_STREAM: u64 = 1;
const IMU_STREAM: u64 = 2;
const CAMERA_STREAM: u64 = 100;

/// Generates the full dataset of a scenario.
pub fn run_scenario(config: &ScenarioConfig) -> Result<Dataset> {
    config.validate()?;
    let traj = config.trajectory.build()?;
    let world = config.world.build(&mut stream_rng(config.seed, WORLD_STREAM))?;
    let (imu, states) = synthesize_imu(&traj, &config.imu, config.duration, config.seed);
    let faults = FaultScript::new(config.faults.clone());

    let mut frames = Vec::new();
    let mut capture_times = Vec::new();
    for cam in &config.cameras {
        let mut rng = stream_rng(config.seed, CAMERA_STREAM + cam.id as u64);
        let salt = config.seed ^ ((cam.id as u64) << 32);
        for t in cam.frame_times(imu.last().map_or(0.0, |s| s.timestamp)) {
            let capture = t + cam.time_offset;
            let covered = match faults.availability(cam.id, capture) {
                Availability::Unplugged => continue,
                Availability::Covered => true,
                Availability::Available => false,
            };
            frames.push(camera::detect(&traj, &world, cam, t, covered, salt, &mut rng));
            capture_times.push(capture);
        }
    }
    frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.camera_id.cmp(&b.camera_id)));

    let mut ground_truth = states.clone();
    for t in capture_times {
        let bias = interpolate_states(&states, t).expect("capture time inside the IMU span");
        ground_truth.push(traj.at(t).state(t, bias.bias_accel, bias.bias_gyro));
    }
    ground_truth.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    ground_truth.dedup_by(|a, b| a.timestamp == b.timestamp);

    Ok(Dataset {
        config: config.clone(),
        imu,
        frames,
        ground_truth,
    })
}

fn synthesize_imu(
    traj: &Trajectory,
    spec: &ImuSimSpec,
    duration: f64,
    seed: u64,
) -> (Vec<ImuSample>, Vec<ImuState>) {
    sensors::synthesize_imu(traj, spec, duration, &mut stream_rng(seed, IMU_STREAM))
}

/// Number of frame timestamps shared by two different cameras.
pub fn shared_timestamps(frames: &[RawFrame]) -> usize {
    let mut times: Vec<(f64, u32)> = frames.iter().map(|f| (f.timestamp, f.camera_id)).collect();
    times.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    times.windows(2).filter(|w| w[0].0 == w[1].0 && w[0].1 != w[1].1).count()
}
