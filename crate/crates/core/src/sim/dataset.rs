//! Recorded scenario data and its on-disk layout:
//!
//! ```text
//! scenario.cfg              copy of the generating configuration
//! imu.csv                   timestamp,wx,wy,wz,ax,ay,az
//! cam<id>.csv               timestamp,id,u,v,du,dv,depth (one row per feature;
//!                           a frame without features is a row with only a timestamp)
//! ground_truth.tum          timestamp tx ty tz qx qy qz qw
//! ground_truth_states.csv   timestamp,p,q(xyzw),v,b_a,b_g
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, Vector2, Vector3};

use crate::backend::state::ImuState;
use crate::coordinator::FeatureObservation;
use crate::error::{Error, Result};
use crate::eval::{write_tum, StampedPose};
use crate::imu::{read_imu_csv, write_imu_csv, ImuSample};
use crate::manifold::Rotation;
use crate::sim::camera::RawFrame;
use crate::sim::ScenarioConfig;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub imu: Vec<ImuSample>,
    /// All cameras, ordered by timestamp then camera id.
    pub frames: Vec<RawFrame>,
    /// True states at every IMU sample and every frame capture time.
    pub ground_truth: Vec<ImuState>,
}

pub const CONFIG_FILE: &str = "scenario.cfg";
pub const IMU_FILE: &str = "imu.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.tum";
pub const STATES_FILE: &str = "ground_truth_states.csv";

pub fn camera_file(id: u32) -> String {
    format!("cam{id}.csv")
}

impl Dataset {
    pub fn ground_truth_poses(&self) -> Vec<StampedPose> {
        self.ground_truth
            .iter()
            .map(|s| StampedPose {
                timestamp: s.timestamp,
                pose: s.pose(),
            })
            .collect()
    }

    pub fn frames_of(&self, camera: u32) -> impl Iterator<Item = &RawFrame> {
        self.frames.iter().filter(move |f| f.camera_id == camera)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write(CONFIG_FILE, self.config.to_toml())?;
        write_imu_csv(&dir.join(IMU_FILE), &self.imu)?;
        for cam in &self.config.cameras {
            let mut s = String::from("timestamp,id,u,v,du,dv,depth\n");
            for f in self.frames_of(cam.id) {
                if f.detections.is_empty() {
                    let _ = writeln!(s, "{},,,,,,", f.timestamp);
                }
                for d in &f.detections {
                    let depth = d.depth.map(|v| v.to_string()).unwrap_or_default();
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{}",
                        f.timestamp, d.id, d.uv.x, d.uv.y, d.velocity.x, d.velocity.y, depth
                    );
                }
            }
            write(&camera_file(cam.id), s)?;
        }
        write_tum(&dir.join(GROUND_TRUTH_FILE), &self.ground_truth_poses())?;
        let mut s = String::from("timestamp,px,py,pz,qx,qy,qz,qw,vx,vy,vz,bax,bay,baz,bgx,bgy,bgz\n");
        for g in &self.ground_truth {
            let q = g.orientation.quaternion();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                g.timestamp,
                g.position.x,
                g.position.y,
                g.position.z,
                q.i,
                q.j,
                q.k,
                q.w,
                g.velocity.x,
                g.velocity.y,
                g.velocity.z,
                g.bias_accel.x,
                g.bias_accel.y,
                g.bias_accel.z,
                g.bias_gyro.x,
                g.bias_gyro.y,
                g.bias_gyro.z
            );
        }
        write(STATES_FILE, s)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let config = ScenarioConfig::load(&dir.join(CONFIG_FILE))?;
        let imu = read_imu_csv(&dir.join(IMU_FILE))?;
        let mut frames = Vec::new();
        for cam in &config.cameras {
            frames.extend(read_camera_csv(&dir.join(camera_file(cam.id)), cam.id)?);
        }
        frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.camera_id.cmp(&b.camera_id)));
        let ground_truth = read_states(&dir.join(STATES_FILE))?;
        Ok(Self {
            config,
            imu,
            frames,
            ground_truth,
        })
    }
}

fn numbers(path: &Path, lineno: usize, line: &str, expected: usize) -> Result<Vec<Option<f64>>> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != expected {
        return Err(Error::parse(
            path,
            lineno,
            format!("expected {expected} fields, got {}", fields.len()),
        ));
    }
    fields
        .iter()
        .map(|f| {
            if f.is_empty() {
                Ok(None)
            } else {
                f.parse::<f64>().map(Some).map_err(|e| Error::parse(path, lineno, format!("{f:?}: {e}")))
            }
        })
        .collect()
}

fn read_camera_csv(path: &Path, camera_id: u32) -> Result<Vec<RawFrame>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut frames: Vec<RawFrame> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("timestamp") || line.starts_with('#') {
            continue;
        }
        let v = numbers(path, i + 1, line, 7)?;
        let t = v[0].ok_or_else(|| Error::parse(path, i + 1, "missing timestamp"))?;
        if frames.last().is_none_or(|f| f.timestamp != t) {
            if frames.last().is_some_and(|f| f.timestamp > t) {
                return Err(Error::parse(path, i + 1, "frame timestamps must not decrease"));
            }
            frames.push(RawFrame {
                camera_id,
                timestamp: t,
                detections: Vec::new(),
            });
        }
        let Some(id) = v[1] else { continue };
        let field = |k: usize| v[k].ok_or_else(|| Error::parse(path, i + 1, format!("missing field {k}")));
        frames.last_mut().expect("frame pushed above").detections.push(FeatureObservation {
            id: id as u64,
            uv: Vector2::new(field(2)?, field(3)?),
            velocity: Vector2::new(field(4)?, field(5)?),
            depth: v[6],
            track_length: 0,
        });
    }
    Ok(frames)
}

fn read_states(path: &Path) -> Result<Vec<ImuState>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("timestamp") {
            continue;
        }
        let v: Vec<f64> = numbers(path, i + 1, line, 17)?
            .into_iter()
            .map(|x| x.ok_or_else(|| Error::parse(path, i + 1, "empty field")))
            .collect::<Result<_>>()?;
        out.push(ImuState {
            timestamp: v[0],
            position: Vector3::new(v[1], v[2], v[3]),
            orientation: Rotation::from_quaternion(Quaternion::new(v[7], v[4], v[5], v[6])),
            velocity: Vector3::new(v[8], v[9], v[10]),
            bias_accel: Vector3::new(v[11], v[12], v[13]),
            bias_gyro: Vector3::new(v[14], v[15], v[16]),
        });
    }
    Ok(out)
}
