//! Trajectory metrics, the replay pipeline and benchmark reports.

pub mod metrics;
pub mod pipeline;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::backend::estimator::OdometryRecord;
use crate::error::{Error, Result};
use crate::sim::{run_scenario, Dataset, ScenarioConfig};

pub use metrics::{
    associate, compute_ate, compute_rpe, format_tum, parse_tum, read_tum, umeyama, write_tum, AteResult, Association,
    StampedPose,
};
pub use pipeline::{run_playback, run_streaming, BudgetSample, RunResult, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// [s]
    pub rpe_step: f64,
    pub align: bool,
    /// Largest timestamp difference for estimate/truth pairing [s].
    pub max_dt: f64,
    /// ATE above which a run counts as diverged [m].
    pub divergence_threshold: f64,
    /// Fraction of the scenario that must be covered by odometry output.
    pub min_coverage: f64,
    /// Output gaps longer than this do not count as covered [s].
    pub max_gap: f64,
    /// Back-end tick rate during playback [Hz].
    pub backend_rate: f64,
    /// Benchmark variants; empty means proposed, no_alloc and every single camera.
    pub variants: Vec<String>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            rpe_step: 1.0 / 30.0,
            align: true,
            max_dt: 0.01,
            divergence_threshold: 5.0,
            min_coverage: 0.9,
            max_gap: 1.0,
            backend_rate: 30.0,
            variants: Vec::new(),
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.rpe_step, self.max_dt, self.divergence_threshold, self.max_gap, self.backend_rate];
        if positive.iter().any(|v| !(*v > 0.0)) || !(0.0..=1.0).contains(&self.min_coverage) {
            return Err(Error::Config("evaluation parameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Fail,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Fail => "fail",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub status: Status,
    /// `None` when the run failed.
    pub ate: Option<f64>,
    pub rpe: Option<f64>,
    pub coverage: f64,
    pub reason: Option<String>,
}

impl MetricReport {
    /// ATE with failures ranked above every successful run.
    pub fn ate_or_inf(&self) -> f64 {
        self.ate.unwrap_or(f64::INFINITY)
    }
}

pub fn odometry_poses(odometry: &[OdometryRecord]) -> Vec<StampedPose> {
    odometry
        .iter()
        .map(|r| StampedPose {
            timestamp: r.timestamp,
            pose: r.state.pose(),
        })
        .collect()
}

/// Fraction of `[start, end]` spanned by output samples no further apart
/// than `max_gap`.
pub fn coverage(times: &[f64], start: f64, end: f64, max_gap: f64) -> f64 {
    if end <= start {
        return 0.0;
    }
    let covered: f64 = times
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|gap| *gap <= max_gap)
        .sum();
    (covered / (end - start)).min(1.0)
}

/// Metrics and pass/fail status of one run.
pub fn evaluate_run(dataset: &Dataset, variant: &Variant, run: &RunResult) -> MetricReport {
    let cfg = &dataset.config.evaluation;
    let cameras = variant.cameras(&dataset.config);
    let start = dataset
        .frames
        .iter()
        .find(|f| cameras.contains(&f.camera_id))
        .map_or(0.0, |f| f.timestamp);
    let end = dataset.imu.last().map_or(0.0, |s| s.timestamp);
    let times: Vec<f64> = run.odometry.iter().map(|r| r.timestamp).collect();
    let cov = coverage(&times, start, end, cfg.max_gap);
    let fail = |reason: String| MetricReport {
        status: Status::Fail,
        ate: None,
        rpe: None,
        coverage: cov,
        reason: Some(reason),
    };
    if run.failed {
        return fail("solver failure".into());
    }
    if run.odometry.is_empty() {
        return fail("no output".into());
    }
    let est = odometry_poses(&run.odometry);
    let truth = dataset.ground_truth_poses();
    let assoc = match associate(&est, &truth, cfg.max_dt) {
        Ok(a) => a,
        Err(e) => return fail(e.to_string()),
    };
    let ate = compute_ate(&est, &truth, &assoc, cfg.align).rmse;
    if !ate.is_finite() || ate > cfg.divergence_threshold {
        return fail(format!("diverged (ATE {ate:.3} m)"));
    }
    if cov < cfg.min_coverage {
        return fail(format!("coverage {:.1}%", cov * 100.0));
    }
    let rpe = compute_rpe(&est, &truth, &assoc, cfg.rpe_step).ok();
    MetricReport {
        status: Status::Ok,
        ate: Some(ate),
        rpe,
        coverage: cov,
        reason: None,
    }
}

/// One report row.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRow {
    pub scenario: String,
    pub variant: String,
    pub report: MetricReport,
    pub runtime_s: f64,
}

pub const REPORT_HEADER: &str = "scenario,variant,status,ate_m,rpe_m,runtime_s";

/// CSV report; runtimes are left blank unless `timing` is set so that
/// repeated runs produce identical bytes.
pub fn format_report_csv(rows: &[BenchmarkRow], timing: bool) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    let num = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        let runtime = if timing { format!("{:.3}", r.runtime_s) } else { String::new() };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.scenario,
            r.variant,
            r.report.status.as_str(),
            num(r.report.ate),
            num(r.report.rpe),
            runtime
        );
    }
    s
}

/// Plain-text table with one row per scenario and an (ATE, RPE) column pair
/// per variant; failed runs show `x`.
pub fn format_report_table(rows: &[BenchmarkRow]) -> String {
    let mut scenarios: Vec<&str> = Vec::new();
    let mut variants: Vec<&str> = Vec::new();
    for r in rows {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    let mut header = vec!["scenario".to_string()];
    for v in &variants {
        header.push(format!("{v} ATE(m)"));
        header.push(format!("{v} RPE(m)"));
    }
    let mut table = vec![header];
    for s in &scenarios {
        let mut line = vec![s.to_string()];
        for v in &variants {
            match rows.iter().find(|r| r.scenario == *s && r.variant == *v) {
                Some(r) if r.report.status == Status::Ok => {
                    line.push(r.report.ate.map_or("-".into(), |x| format!("{x:.5}")));
                    line.push(r.report.rpe.map_or("-".into(), |x| format!("{x:.6}")));
                }
                Some(_) => {
                    line.push("x".into());
                    line.push("x".into());
                }
                None => {
                    line.push("-".into());
                    line.push("-".into());
                }
            }
        }
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &table {
        let cells: Vec<String> = line.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// Runs one scenario under each variant in playback mode.
pub fn benchmark_scenario(config: &ScenarioConfig) -> Result<Vec<BenchmarkRow>> {
    let dataset = run_scenario(config)?;
    let variants = if config.evaluation.variants.is_empty() {
        Variant::defaults(config)
    } else {
        config
            .evaluation
            .variants
            .iter()
            .map(|v| Variant::parse(v, config))
            .collect::<Result<Vec<_>>>()?
    };
    let mut rows = Vec::new();
    for v in &variants {
        let run = run_playback(&dataset, v)?;
        let report = evaluate_run(&dataset, v, &run);
        info!(
            "{} / {}: {} ATE {:?} RPE {:?}",
            config.name,
            v.name(config),
            report.status.as_str(),
            report.ate,
            report.rpe
        );
        rows.push(BenchmarkRow {
            scenario: config.name.clone(),
            variant: v.name(config),
            report,
            runtime_s: run.runtime_s,
        });
    }
    Ok(rows)
}

/// Scenario files (`*.cfg`) in a directory, sorted by name.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "cfg") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("{}: no .cfg scenario files", dir.display())));
    }
    Ok(files)
}

pub fn run_benchmark(dir: &Path) -> Result<Vec<BenchmarkRow>> {
    let mut rows = Vec::new();
    for f in scenario_files(dir)? {
        rows.extend(benchmark_scenario(&ScenarioConfig::load(&f)?)?);
    }
    Ok(rows)
}
