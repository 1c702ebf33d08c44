//! Simulator properties: IMU consistency, determinism, asynchrony,
//! noiseless projections and fault scripts.

use mcvio::imu::ImuSample;
use mcvio::sim::camera::detect;
use mcvio::sim::{run_scenario, shared_timestamps, Dataset, ScenarioConfig};
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BASE: &str = r#"
name = "small"
duration = 12.0
seed = 3

[trajectory]
rest = 1.0
ramp = 2.0

[trajectory.path]
kind = "circle"
center = [0.0, 0.0, 1.5]
radius = 2.0
speed = 0.8

[trajectory.excitation]
roll_deg = [5.0, 0.3]
pitch_deg = [5.0, 0.23]
yaw_deg = [10.0, 0.13]

[[world.clusters]]
min = [-5.0, -5.0, -0.05]
max = [5.0, 5.0, 0.05]
density = 6.0

[[world.clusters]]
min = [4.95, -5.0, 0.0]
max = [5.05, 5.0, 4.0]
density = 3.0

[[world.clusters]]
min = [-5.0, -5.0, 3.95]
max = [5.0, 5.0, 4.05]
density = 6.0

[[cameras]]
id = 0
name = "front"
mount = "front"
translation = [0.1, 0.0, 0.0]

[[cameras]]
id = 1
name = "top"
mount = "top"
phase = 0.011

[[cameras]]
id = 2
name = "down"
mount = "down"
phase = 0.023
"#;

fn config(extra: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml(&format!("{BASE}\n{extra}")).unwrap()
}

fn noiseless() -> ScenarioConfig {
    let mut c = config("[imu]\nnoiseless = true\n");
    for cam in &mut c.cameras {
        cam.pixel_sigma = 0.0;
        cam.velocity_sigma = 0.0;
        cam.depth_sigma = 0.0;
    }
    c
}

/// World-frame strapdown RK4 over a Catmull-Rom interpolation of the samples.
fn integrate(samples: &[ImuSample], r0: Matrix3<f64>, v0: Vector3<f64>, p0: Vector3<f64>) -> Vector3<f64> {
    let g = Vector3::new(0.0, 0.0, -9.81);
    let skew = |w: &Vector3<f64>| Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0);
    let spline = |y: [Vector3<f64>; 4], s: f64| {
        let (s2, s3) = (s * s, s * s * s);
        (y[1] * 2.0
            + (y[2] - y[0]) * s
            + (y[0] * 2.0 - y[1] * 5.0 + y[2] * 4.0 - y[3]) * s2
            + (y[1] * 3.0 - y[0] - y[2] * 3.0 + y[3]) * s3)
            * 0.5
    };
    let (mut r, mut v, mut p) = (r0, v0, p0);
    let n = samples.len();
    for i in 0..n - 1 {
        let idx = [i.saturating_sub(1), i, i + 1, (i + 2).min(n - 1)];
        let gyro = idx.map(|j| samples[j].gyro);
        let accel = idx.map(|j| samples[j].accel);
        let dt = samples[i + 1].timestamp - samples[i].timestamp;
        let sub = 4;
        let h = dt / sub as f64;
        let f = |r: &Matrix3<f64>, v: &Vector3<f64>, tau: f64| {
            let s = tau / dt;
            (r * skew(&spline(gyro, s)), r * spline(accel, s) + g, *v)
        };
        for k in 0..sub {
            let tau = k as f64 * h;
            let (k1r, k1v, k1p) = f(&r, &v, tau);
            let (k2r, k2v, k2p) = f(&(r + k1r * (h / 2.0)), &(v + k1v * (h / 2.0)), tau + h / 2.0);
            let (k3r, k3v, k3p) = f(&(r + k2r * (h / 2.0)), &(v + k2v * (h / 2.0)), tau + h / 2.0);
            let (k4r, k4v, k4p) = f(&(r + k3r * h), &(v + k3v * h), tau + h);
            r += (k1r + k2r * 2.0 + k3r * 2.0 + k4r) * (h / 6.0);
            v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
            p += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
        }
        r = *nalgebra::Rotation3::from_matrix(&r).matrix();
    }
    p
}

#[test]
fn noiseless_imu_integrates_to_the_trajectory() {
    let c = noiseless();
    let d = run_scenario(&c).unwrap();
    let s0 = d.ground_truth[0];
    let end = d.imu.iter().position(|s| s.timestamp >= 10.0).unwrap();
    let p = integrate(&d.imu[..=end], s0.orientation.matrix(), s0.velocity, s0.position);
    let truth = c.trajectory.build().unwrap().at(d.imu[end].timestamp).position;
    let err = (p - truth).norm();
    assert!(err < 1e-5, "drift after 10 s: {err:e} m");
}

#[test]
fn same_seed_gives_identical_datasets() {
    let c = config("");
    let a = run_scenario(&c).unwrap();
    let b = run_scenario(&c).unwrap();
    assert_eq!(a.imu, b.imu);
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.ground_truth, b.ground_truth);
    let other = run_scenario(&c.with_seed(4)).unwrap();
    assert_ne!(a.imu, other.imu);

    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.write(da.path()).unwrap();
    b.write(db.path()).unwrap();
    for name in ["imu.csv", "cam0.csv", "cam1.csv", "cam2.csv", "ground_truth.tum", "scenario.cfg"] {
        let x = std::fs::read(da.path().join(name)).unwrap();
        let y = std::fs::read(db.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let c = config("");
    let a = run_scenario(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    a.write(dir.path()).unwrap();
    let b = Dataset::read(dir.path()).unwrap();
    assert_eq!(a.config, b.config);
    assert_eq!(a.imu, b.imu);
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.ground_truth.len(), b.ground_truth.len());
    for (x, y) in a.ground_truth.iter().zip(&b.ground_truth) {
        assert_eq!(x.timestamp, y.timestamp);
        assert!((x.position - y.position).norm() < 1e-12);
        assert!(x.orientation.angle_to(&y.orientation) < 1e-12);
    }
}

#[test]
fn cameras_never_share_a_timestamp() {
    let mut c = config("");
    c.duration = 60.0;
    let d = run_scenario(&c).unwrap();
    assert_eq!(shared_timestamps(&d.frames), 0);
    let mut times: Vec<f64> = d.frames.iter().map(|f| f.timestamp).collect();
    let n = times.len();
    times.dedup();
    assert_eq!(times.len(), n);
    // Every camera produced its full 30 Hz stream.
    for id in 0..3 {
        assert!(d.frames_of(id).count() >= 1799);
    }
}

#[test]
fn noiseless_observations_are_exact_projections() {
    let c = noiseless();
    let traj = c.trajectory.build().unwrap();
    let world = c.world.build(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for cam in &c.cameras {
        let r_bc = cam.body_from_camera().rotation.matrix();
        let t_bc = cam.body_from_camera().translation;
        for k in 0..40 {
            let t = 1.0 + k as f64 * 0.27;
            let frame = detect(&traj, &world, cam, t, false, 9, &mut rng);
            let body = traj.at(t);
            let r_wb = body.orientation.matrix();
            let r_wc = r_wb * r_bc;
            let o_c = body.position + r_wb * t_bc;
            for d in &frame.detections {
                let p = r_wc.transpose() * (world.landmarks[d.id as usize] - o_c);
                let e = (d.uv - p.xy() / p.z).norm();
                assert!(e < 1e-12, "camera {} t {t}: {e:e}", cam.id);
                assert!((d.depth.unwrap() - p.z).abs() < 1e-12);
                checked += 1;
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn fault_script_examples() {
    let c = config(
        r#"
[[faults]]
kind = "cover"
camera = 1
start = 5.0
end = 10.0

[[faults]]
kind = "unplug"
camera = 1
time = 11.0

[[faults]]
kind = "plug"
camera = 0
time = 8.0
"#,
    );
    let d = run_scenario(&c).unwrap();
    let top: Vec<_> = d.frames_of(1).collect();
    assert!(top.iter().filter(|f| f.timestamp > 5.0 && f.timestamp < 10.0).all(|f| f.detections.is_empty()));
    assert!(top.iter().any(|f| (6.9..7.1).contains(&f.timestamp)));
    assert!(top.iter().filter(|f| f.timestamp < 5.0 && f.timestamp > 3.0).all(|f| !f.detections.is_empty()));
    assert!(top.iter().all(|f| f.timestamp < 11.0));
    // A camera whose first event is a plug starts unplugged.
    let front: Vec<_> = d.frames_of(0).collect();
    assert_eq!(front[0].timestamp, 8.0);
    assert!(!front[0].detections.is_empty());
}
