// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use mcvio::eval::{
    associate, compute_ate, compute_rpe, format_report_csv, format_report_table, odometry_poses, read_tum,
    run_benchmark, run_playback, run_streaming, write_tum, Variant,
};
use mcvio::sim::{run_scenario, Dataset, ScenarioConfig};
use mcvio::{Error, Result};

#[derive(Parser)]
#[command(name = "mcvio", version, about = "Multi-camera visual-inertial odometry toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a scenario file.
    Simulate {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the estimator on a dataset and write a TUM trajectory.
    Estimate {
        dataset: PathBuf,
        /// proposed, no_alloc or single:<camera>.
        #[arg(long, default_value = "proposed")]
        variant: String,
        #[arg(short, long)]
        output: PathBuf,
        /// Replay in wall-clock time with one thread per sensor.
        #[arg(long)]
        stream: bool,
        /// Replay speed factor for --stream.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Write the per-tick feature budgets as CSV.
        #[arg(long)]
        fn_trace: Option<PathBuf>,
    },
    /// Compare an estimated trajectory with ground truth.
    Evaluate {
        estimate: PathBuf,
        ground_truth: PathBuf,
        /// Rigidly align the estimate before computing ATE.
        #[arg(long)]
        align: bool,
        /// [s]
        #[arg(long, default_value_t = 1.0 / 30.0)]
        rpe_step: f64,
        /// Largest timestamp difference for pairing [s].
        #[arg(long, default_value_t = 0.01)]
        max_dt: f64,
    },
    /// Simulate and evaluate every scenario in a directory.
    Benchmark {
        scenarios: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Include runtimes in the report.
        #[arg(long)]
        timing: bool,
    },
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, output, seed } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg = cfg.with_seed(seed);
            }
            let dataset = run_scenario(&cfg)?;
            dataset.write(&output)?;
            info!(
                "{}: {} IMU samples, {} frames written to {}",
                cfg.name,
                dataset.imu.len(),
                dataset.frames.len(),
                output.display()
            );
        }
        Command::Estimate {
            dataset,
            variant,
            output,
            stream,
            speed,
            fn_trace,
        } => {
            let data = Dataset::read(&dataset)?;
            let v = Variant::parse(&variant, &data.config)?;
            let result = if stream {
                run_streaming(&data, &v, speed)?
            } else {
                run_playback(&data, &v)?
            };
            if result.failed {
                warn!("estimator failed; trajectory truncated at the failure");
            }
            write_tum(&output, &odometry_poses(&result.odometry))?;
            if let Some(path) = fn_trace {
                let mut s = String::from("time,camera,budget\n");
                for sample in &result.fn_trace {
                    for (cam, budget) in &sample.budgets {
                        s.push_str(&format!("{},{cam},{budget}\n", sample.time));
                    }
                }
                write_file(&path, &s)?;
            }
            for (cam, td) in &result.time_offsets {
                info!("camera {cam}: time offset {td:.6} s");
            }
            println!(
                "poses={} processed={} rejected={} dropped={} failed={}",
                result.odometry.len(),
                result.frames_processed,
                result.frames_rejected,
                result.frames_dropped,
                result.failed
            );
        }
        Command::Evaluate {
            estimate,
            ground_truth,
            align,
            rpe_step,
            max_dt,
        } => {
            if !(rpe_step > 0.0) || !(max_dt > 0.0) {
                return Err(Error::Config("--rpe-step and --max-dt must be positive".into()));
            }
            let est = read_tum(&estimate)?;
            let gt = read_tum(&ground_truth)?;
            let assoc = associate(&est, &gt, max_dt)?;
            let ate = compute_ate(&est, &gt, &assoc, align);
            let rpe = compute_rpe(&est, &gt, &assoc, rpe_step)?;
            println!(
                "ate_m={:.9} rpe_m={:.9} pairs={} aligned={}",
                ate.rmse,
                rpe,
                assoc.pairs.len(),
                ate.aligned
            );
        }
        Command::Benchmark {
            scenarios,
            output,
            timing,
        } => {
            let rows = run_benchmark(&scenarios)?;
            write_file(&output, &format_report_csv(&rows, timing))?;
            print!("{}", format_report_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let path = e.path().map(|p| p.display().to_string()).unwrap_or_default();
            eprintln!("error: kind={} path={path:?} message={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}
