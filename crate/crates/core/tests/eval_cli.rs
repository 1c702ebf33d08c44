//! Trajectory metrics and the command-line interface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcvio::eval::{associate, compute_ate, compute_rpe, format_tum, StampedPose, REPORT_HEADER};
use mcvio::manifold::{Pose, Rotation};
use nalgebra::Vector3;
use proptest::prelude::*;

fn mcvio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcvio")).args(args).output().unwrap()
}

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

/// The noiseless scenario shortened to a few seconds.
fn short_scenario(name: &str, duration: f64) -> String {
    std::fs::read_to_string(scenario_dir().join("noiseless.cfg"))
        .unwrap()
        .replace("duration = 60.0", &format!("duration = {duration:?}"))
        .replace("name = \"noiseless\"", &format!("name = {name:?}"))
}

fn wiggly_path(n: usize, phase: f64) -> Vec<StampedPose> {
    (0..n)
        .map(|k| {
            let t = k as f64 * 0.05;
            StampedPose {
                timestamp: t,
                pose: Pose::new(
                    Vector3::new((t + phase).sin() * 2.0, (0.7 * t).cos(), 0.3 * t + 0.2 * (2.0 * t).sin()),
                    Rotation::exp(&Vector3::new(0.1 * t.sin(), 0.05 * t, 0.3 * t)),
                ),
            }
        })
        .collect()
}

fn transformed(path: &[StampedPose], t: &Pose) -> Vec<StampedPose> {
    path.iter()
        .map(|p| StampedPose {
            timestamp: p.timestamp,
            pose: t.compose(&p.pose),
        })
        .collect()
}

fn rigid() -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-10.0..10.0f64), prop::array::uniform3(-3.0..3.0f64))
        .prop_map(|(t, w)| Pose::new(Vector3::from(t), Rotation::exp(&Vector3::from(w))))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aligned_ate_ignores_rigid_transforms(t in rigid(), phase in 0.0..0.3f64) {
        let truth = wiggly_path(120, 0.0);
        let est = wiggly_path(120, phase);
        let moved = transformed(&est, &t);
        let assoc = associate(&est, &truth, 0.01).unwrap();
        let a = compute_ate(&est, &truth, &assoc, true).rmse;
        let b = compute_ate(&moved, &truth, &assoc, true).rmse;
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn rpe_ignores_a_constant_rigid_offset(t in rigid(), phase in 0.0..0.3f64) {
        let truth = wiggly_path(120, 0.0);
        let est = wiggly_path(120, phase);
        let assoc = associate(&est, &truth, 0.01).unwrap();
        let a = compute_rpe(&est, &truth, &assoc, 0.25).unwrap();
        let b = compute_rpe(&transformed(&est, &t), &truth, &assoc, 0.25).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn evaluate_identical_files_gives_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.tum");
    std::fs::write(&path, format_tum(&wiggly_path(100, 0.0))).unwrap();
    let p = path.to_str().unwrap();
    let out = mcvio(&["evaluate", p, p, "--align", "--rpe-step", "0.1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("ate_m=0.000000000 rpe_m=0.000000000"), "{stdout}");
}

#[test]
fn estimate_on_a_missing_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = mcvio(&["estimate", missing.to_str().unwrap(), "-o", dir.path().join("t.tum").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: kind="), "{stderr}");
    assert!(stderr.contains("nowhere"), "{stderr}");
}

#[test]
fn invalid_arguments_exit_with_two() {
    for args in [
        &["frobnicate"][..],
        &["evaluate", "only_one.tum"],
        &["simulate", "x.cfg"],
        &["evaluate", "a", "b", "--rpe-step", "abc"],
        &[],
    ] {
        assert_eq!(mcvio(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn simulate_estimate_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.cfg");
    std::fs::write(&cfg, short_scenario("short", 8.0)).unwrap();
    let data = dir.path().join("data");
    let est = dir.path().join("est.tum");
    let s = |p: &Path| p.to_str().unwrap().to_owned();

    let out = mcvio(&["simulate", &s(&cfg), "-o", &s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["imu.csv", "cam0.csv", "cam1.csv", "cam2.csv", "ground_truth.tum", "scenario.cfg"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let out = mcvio(&["estimate", &s(&data), "--variant", "single:front", "-o", &s(&est)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = mcvio(&["evaluate", &s(&est), &s(&data.join("ground_truth.tum")), "--align"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let ate: f64 = stdout.split_whitespace().next().unwrap().trim_start_matches("ate_m=").parse().unwrap();
    assert!(ate < 0.05, "{stdout}");

    let out = mcvio(&["estimate", &s(&data), "--variant", "single:side", "-o", &s(&est)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=config"));
}

#[test]
fn benchmark_writes_the_report_header() {
    let dir = tempfile::tempdir().unwrap();
    let scenarios = dir.path().join("scenarios");
    std::fs::create_dir(&scenarios).unwrap();
    std::fs::write(scenarios.join("a.cfg"), short_scenario("a", 5.0)).unwrap();
    let report = dir.path().join("report.csv");
    let out = mcvio(&["benchmark", scenarios.to_str().unwrap(), "-o", report.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(REPORT_HEADER));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..3], &["a", "proposed", "ok"]);
    assert_eq!(row[5], "");
}
