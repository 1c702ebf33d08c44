//! Simulated cameras: mounting, raw detections and the budgeted tracker.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backend::state::CameraExtrinsics;
use crate::backend::window::CameraModel;
use crate::coordinator::{FeatureObservation, FrameMeasurement};
use crate::error::{Error, Result};
use crate::manifold::{Pose, Rotation};
use crate::sim::trajectory::Trajectory;
use crate::sim::world::World;

/// Nominal mounting directions. Camera axes: z forward, x right, y down.
/// Body axes: x forward, y left, z up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mount {
    Front,
    Top,
    Down,
    Back,
    Left,
    Right,
}

impl Mount {
    pub fn rotation(&self) -> Rotation {
        // Columns are the camera x, y, z axes expressed in the body frame.
        let cols = |x: [f64; 3], y: [f64; 3], z: [f64; 3]| {
            Rotation::from_matrix(&nalgebra::Matrix3::from_columns(&[x.into(), y.into(), z.into()]))
        };
        match self {
            Mount::Front => cols([0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]),
            Mount::Back => cols([0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [-1.0, 0.0, 0.0]),
            Mount::Left => cols([1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]),
            Mount::Right => cols([-1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, -1.0, 0.0]),
            Mount::Top => cols([0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
            Mount::Down => cols([0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -1.0]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimCameraSpec {
    pub id: u32,
    pub name: String,
    pub mount: Mount,
    /// Camera origin in the body frame [m].
    #[serde(default)]
    pub translation: [f64; 3],
    /// Extra rotation after the mount, as (yaw, pitch, roll) in degrees.
    #[serde(default)]
    pub tilt_deg: [f64; 3],
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    #[serde(default = "default_rate")]
    pub rate: f64,
    /// Offset of the frame grid [s].
    #[serde(default)]
    pub phase: f64,
    #[serde(default = "default_true")]
    pub depth: bool,
    #[serde(default = "default_depth_sigma")]
    pub depth_sigma: f64,
    /// Observation noise in normalized image units.
    #[serde(default = "default_pixel_sigma")]
    pub pixel_sigma: f64,
    /// Noise of the reported feature velocity [1/s].
    #[serde(default = "default_velocity_sigma")]
    pub velocity_sigma: f64,
    #[serde(default)]
    pub outlier_rate: f64,
    /// True latency between the IMU clock and camera timestamps [s].
    #[serde(default)]
    pub time_offset: f64,
    /// Time offset the estimator starts from [s].
    #[serde(default)]
    pub nominal_time_offset: f64,
    #[serde(default = "default_range")]
    pub max_range: f64,
    /// Detector limit per frame.
    #[serde(default = "default_detections")]
    pub max_detections: usize,
}

fn default_fov() -> f64 {
    90.0
}
fn default_rate() -> f64 {
    30.0
}
fn default_true() -> bool {
    true
}
fn default_depth_sigma() -> f64 {
    0.01
}
fn default_pixel_sigma() -> f64 {
    1.0 / 460.0
}
fn default_velocity_sigma() -> f64 {
    0.02
}
fn default_range() -> f64 {
    10.0
}
fn default_detections() -> usize {
    300
}

/// Lower bound on the noise the estimator assumes, so that noiseless data
/// still yields well-conditioned weights.
pub const MIN_MODEL_PIXEL_SIGMA: f64 = 0.5 / 460.0;
pub const MIN_MODEL_DEPTH_SIGMA: f64 = 0.005;

impl SimCameraSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("camera {}: {m}", self.id)));
        if !(self.rate > 0.0) {
            return bad("rate must be positive".into());
        }
        if !(self.fov_deg > 10.0 && self.fov_deg < 170.0) {
            return bad(format!("fov {} outside (10, 170) degrees", self.fov_deg));
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return bad("outlier_rate must be in [0, 1)".into());
        }
        if self.time_offset.abs() >= CameraExtrinsics::MAX_TIME_OFFSET
            || self.nominal_time_offset.abs() >= CameraExtrinsics::MAX_TIME_OFFSET
        {
            return bad("time offsets must be below 0.1 s".into());
        }
        if self.pixel_sigma < 0.0 || self.depth_sigma < 0.0 || self.velocity_sigma < 0.0 || !(self.max_range > 0.0) {
            return bad("noise levels must be non-negative and max_range positive".into());
        }
        Ok(())
    }

    pub fn body_from_camera(&self) -> Pose {
        let [y, p, r] = self.tilt_deg.map(f64::to_radians);
        Pose::new(
            Vector3::from(self.translation),
            self.mount.rotation() * Rotation::from_euler_zyx(y, p, r),
        )
    }

    /// The calibration the estimator is given: true extrinsics and the
    /// nominal time offset.
    pub fn camera_model(&self) -> CameraModel {
        let mut ext = CameraExtrinsics::new(self.id, self.body_from_camera());
        ext.time_offset = self.nominal_time_offset;
        ext.depth_capable = self.depth;
        CameraModel::new(
            ext,
            self.pixel_sigma.max(MIN_MODEL_PIXEL_SIGMA),
            self.depth_sigma.max(MIN_MODEL_DEPTH_SIGMA),
        )
    }

    /// Frame timestamps (camera clock) whose capture time lies in `[0, end]`.
    pub fn frame_times(&self, end: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0u64;
        loop {
            let t = self.phase + k as f64 / self.rate;
            let capture = t + self.time_offset;
            if capture > end {
                break;
            }
            if capture >= 0.0 {
                out.push(t);
            }
            k += 1;
        }
        out
    }
}

/// Every detection of one frame before budget selection.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub camera_id: u32,
    pub timestamp: f64,
    pub detections: Vec<FeatureObservation>,
}

/// Stable pseudo-random rank of a landmark (splitmix64 finalizer).
pub fn feature_rank(id: u64, salt: u64) -> u64 {
    let mut z = id ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Camera-frame coordinates of every landmark visible at capture time `t`.
pub fn visible_points(
    traj: &Trajectory,
    world: &World,
    cam: &SimCameraSpec,
    body_from_camera: &Pose,
    t: f64,
) -> Vec<(u64, Vector3<f64>)> {
    let body = traj.at(t);
    let pose = Pose::new(body.position, body.orientation).compose(body_from_camera);
    let half = (cam.fov_deg.to_radians() * 0.5).tan();
    let mut out = Vec::new();
    for (id, p) in world.landmarks.iter().enumerate() {
        let c = pose.inverse_transform_point(p);
        if c.z < 0.1 || c.norm() > cam.max_range {
            continue;
        }
        if (c.x / c.z).abs() > half || (c.y / c.z).abs() > half {
            continue;
        }
        if world.occluded(&pose.translation, p) {
            continue;
        }
        out.push((id as u64, c));
    }
    out
}

/// Detections of one frame: projections at the true capture time with
/// image-plane velocity, noise and outliers.
#[allow(clippy::too_many_arguments)]
pub fn detect(
    traj: &Trajectory,
    world: &World,
    cam: &SimCameraSpec,
    timestamp: f64,
    covered: bool,
    salt: u64,
    rng: &mut impl Rng,
) -> RawFrame {
    let mut frame = RawFrame {
        camera_id: cam.id,
        timestamp,
        detections: Vec::new(),
    };
    if covered {
        return frame;
    }
    let ext = cam.body_from_camera();
    let t = timestamp + cam.time_offset;
    let mut visible = visible_points(traj, world, cam, &ext, t);
    visible.sort_by_key(|(id, _)| feature_rank(*id, salt));
    visible.truncate(cam.max_detections);
    visible.sort_by_key(|(id, _)| *id);

    const H: f64 = 1e-4;
    let cam_pose = |t: f64| {
        let b = traj.at(t);
        Pose::new(b.position, b.orientation).compose(&ext)
    };
    let (before, after) = (cam_pose(t - H), cam_pose(t + H));
    let project = |pose: &Pose, id: u64| {
        let c = pose.inverse_transform_point(&world.landmarks[id as usize]);
        Vector2::new(c.x / c.z, c.y / c.z)
    };
    let half = (cam.fov_deg.to_radians() * 0.5).tan();
    for (id, c) in visible {
        let mut uv = Vector2::new(c.x / c.z, c.y / c.z);
        let mut velocity = (project(&after, id) - project(&before, id)) / (2.0 * H);
        let mut depth = cam.depth.then_some(c.z);
        if cam.pixel_sigma > 0.0 {
            uv += Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * cam.pixel_sigma;
        }
        if cam.velocity_sigma > 0.0 {
            velocity +=
                Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * cam.velocity_sigma;
        }
        if let Some(d) = depth.as_mut() {
            if cam.depth_sigma > 0.0 {
                *d = (*d + cam.depth_sigma * rng.sample::<f64, _>(StandardNormal)).max(0.05);
            }
        }
        if cam.outlier_rate > 0.0 && rng.random::<f64>() < cam.outlier_rate {
            uv = Vector2::new(rng.random_range(-half..half), rng.random_range(-half..half));
        }
        frame.detections.push(FeatureObservation {
            id,
            uv,
            velocity,
            depth,
            track_length: 0,
        });
    }
    frame
}

/// Keeps up to the allocated number of features per frame, preferring
/// features tracked in the previous frame.
#[derive(Clone, Debug, Default)]
pub struct Tracker {
    salt: u64,
    /// Track lengths of the previous frame's features.
    previous: BTreeMap<u64, u32>,
}

impl Tracker {
    pub fn new(salt: u64) -> Self {
        Self {
            salt,
            previous: BTreeMap::new(),
        }
    }

    pub fn track(&mut self, raw: &RawFrame, budget: usize) -> FrameMeasurement {
        let mut continuing = Vec::new();
        let mut fresh = Vec::new();
        for d in &raw.detections {
            match self.previous.get(&d.id) {
                Some(&len) => continuing.push((len, d)),
                None => fresh.push(d),
            }
        }
        continuing.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
        continuing.truncate(budget);
        fresh.sort_by_key(|d| feature_rank(d.id, self.salt));
        fresh.truncate(budget - continuing.len());
        let tracked_count = continuing.len();
        let mut observations: Vec<FeatureObservation> = continuing
            .into_iter()
            .map(|(len, d)| FeatureObservation {
                track_length: len + 1,
                ..*d
            })
            .chain(fresh.into_iter().map(|d| FeatureObservation { track_length: 1, ..*d }))
            .collect();
        observations.sort_by_key(|o| o.id);
        self.previous = observations.iter().map(|o| (o.id, o.track_length)).collect();
        FrameMeasurement {
            camera_id: raw.camera_id,
            timestamp: raw.timestamp,
            observations,
            tracked_count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mounts_are_proper_rotations() {
        for m in [Mount::Front, Mount::Back, Mount::Left, Mount::Right, Mount::Top, Mount::Down] {
            let r = m.rotation().matrix();
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
        let front = Mount::Front.rotation();
        assert!((front.rotate(&Vector3::z()) - Vector3::x()).norm() < 1e-12);
        let down = Mount::Down.rotation();
        assert!((down.rotate(&Vector3::z()) + Vector3::z()).norm() < 1e-12);
    }

    fn raw(ids: impl Iterator<Item = u64>) -> RawFrame {
        RawFrame {
            camera_id: 0,
            timestamp: 0.0,
            detections: ids
                .map(|id| FeatureObservation {
                    id,
                    uv: Vector2::zeros(),
                    velocity: Vector2::zeros(),
                    depth: None,
                    track_length: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn tracker_prefers_previous_features() {
        let mut t = Tracker::new(7);
        let first = t.track(&raw(0..40), 40);
        assert_eq!(first.tracked_count, 0);
        assert_eq!(first.observations.len(), 40);
        let second = t.track(&raw(0..200), 50);
        assert_eq!(second.tracked_count, 40);
        assert_eq!(second.observations.len(), 50);
        assert_eq!(second.observations.iter().filter(|o| o.id < 40).count(), 40);
        assert!(second.observations.iter().all(|o| o.track_length == if o.id < 40 { 2 } else { 1 }));
    }

    #[test]
    fn tracked_count_never_exceeds_budget() {
        let mut t = Tracker::new(3);
        t.track(&raw(0..100), 100);
        let f = t.track(&raw(0..100), 30);
        assert_eq!(f.tracked_count, 30);
        assert_eq!(f.observations.len(), 30);
        let f = t.track(&raw(0..100), 10);
        assert_eq!(f.tracked_count, 10);
    }
}
