//! Inertial measurement synthesis and camera fault scripts.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backend::state::ImuState;
use crate::error::{Error, Result};
use crate::imu::{gravity_vector, ImuNoiseParams, ImuSample};
use crate::sim::trajectory::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuSimSpec {
    /// [Hz]
    pub rate: f64,
    /// Skip white noise and bias walks.
    pub noiseless: bool,
    pub gyro_noise_density: f64,
    pub accel_noise_density: f64,
    pub gyro_bias_random_walk: f64,
    pub accel_bias_random_walk: f64,
    pub gravity_magnitude: f64,
    pub initial_bias_accel: [f64; 3],
    pub initial_bias_gyro: [f64; 3],
}

impl Default for ImuSimSpec {
    fn default() -> Self {
        let n = ImuNoiseParams::default();
        Self {
            rate: 500.0,
            noiseless: false,
            gyro_noise_density: n.gyro_noise_density,
            accel_noise_density: n.accel_noise_density,
            gyro_bias_random_walk: n.gyro_bias_random_walk,
            accel_bias_random_walk: n.accel_bias_random_walk,
            gravity_magnitude: n.gravity_magnitude,
            initial_bias_accel: [0.0; 3],
            initial_bias_gyro: [0.0; 3],
        }
    }
}

impl ImuSimSpec {
    /// Noise model handed to the estimator.
    pub fn noise(&self) -> ImuNoiseParams {
        ImuNoiseParams {
            gyro_noise_density: self.gyro_noise_density,
            accel_noise_density: self.accel_noise_density,
            gyro_bias_random_walk: self.gyro_bias_random_walk,
            accel_bias_random_walk: self.accel_bias_random_walk,
            gravity_magnitude: self.gravity_magnitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) {
            return Err(Error::Config("imu: rate must be positive".into()));
        }
        self.noise().validate()
    }
}

fn normal3(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Samples at `k / rate` for `k = 0..` up to `duration`, with the true state
/// (including biases) at each sample time.
pub fn synthesize_imu(
    traj: &Trajectory,
    spec: &ImuSimSpec,
    duration: f64,
    rng: &mut impl Rng,
) -> (Vec<ImuSample>, Vec<ImuState>) {
    let g = gravity_vector(spec.gravity_magnitude);
    let dt = 1.0 / spec.rate;
    let n = (duration * spec.rate).floor() as usize;
    let mut ba = Vector3::from(spec.initial_bias_accel);
    let mut bg = Vector3::from(spec.initial_bias_gyro);
    let (sa, sg) = (spec.accel_noise_density / dt.sqrt(), spec.gyro_noise_density / dt.sqrt());
    let (wa, wg) = (spec.accel_bias_random_walk * dt.sqrt(), spec.gyro_bias_random_walk * dt.sqrt());
    let mut samples = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * dt;
        let p = traj.at(t);
        let mut accel = p.orientation.inverse_rotate(&(p.acceleration - g)) + ba;
        let mut gyro = p.angular_velocity + bg;
        if !spec.noiseless {
            accel += normal3(rng) * sa;
            gyro += normal3(rng) * sg;
        }
        samples.push(ImuSample::new(t, gyro, accel));
        states.push(p.state(t, ba, bg));
        if !spec.noiseless {
            ba += normal3(rng) * wa;
            bg += normal3(rng) * wg;
        }
    }
    (samples, states)
}

/// Timed camera fault.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultEvent {
    /// Lid over the lens: frames keep coming but show nothing.
    Cover { camera: u32, start: f64, end: f64 },
    Unplug { camera: u32, time: f64 },
    Plug { camera: u32, time: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Availability {
    Available,
    Covered,
    Unplugged,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FaultScript {
    pub events: Vec<FaultEvent>,
}

impl FaultScript {
    pub fn new(events: Vec<FaultEvent>) -> Self {
        Self { events }
    }

    pub fn validate(&self, duration: f64, cameras: &[u32]) -> Result<()> {
        for e in &self.events {
            let (cam, t0, t1) = match e {
                FaultEvent::Cover { camera, start, end } => (*camera, *start, *end),
                FaultEvent::Unplug { camera, time } | FaultEvent::Plug { camera, time } => (*camera, *time, *time),
            };
            if !cameras.contains(&cam) {
                return Err(Error::Config(format!("fault refers to unknown camera {cam}")));
            }
            if !(0.0 <= t0 && t0 <= t1 && t1 <= duration) {
                return Err(Error::Config(format!("fault times outside [0, {duration}]: {e:?}")));
            }
        }
        Ok(())
    }

    /// State of `camera` at `t`. A camera whose first plug event precedes
    /// any unplug starts out unplugged.
    pub fn availability(&self, camera: u32, t: f64) -> Availability {
        let mut plugs: Vec<(f64, bool)> = self
            .events
            .iter()
            .filter_map(|e| match e {
                FaultEvent::Unplug { camera: c, time } if *c == camera => Some((*time, false)),
                FaultEvent::Plug { camera: c, time } if *c == camera => Some((*time, true)),
                _ => None,
            })
            .collect();
        plugs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut plugged = plugs.first().is_none_or(|p| !p.1);
        for (time, state) in &plugs {
            if *time <= t {
                plugged = *state;
            }
        }
        if !plugged {
            return Availability::Unplugged;
        }
        let covered = self.events.iter().any(|e| {
            matches!(e, FaultEvent::Cover { camera: c, start, end } if *c == camera && *start <= t && t < *end)
        });
        if covered {
            Availability::Covered
        } else {
            Availability::Available
        }
    }
}
