//! `ctlo`: run the odometry on a point file, simulate scenarios, evaluate
//! trajectories and verify Jacobians.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 divergence or a failed
//! numerical check.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctlo_core::jacobian_check::{self, CheckConfig};
use ctlo_core::pipeline::{Mode, OdometryConfig, PipelineError, TimedPose};
use ctlo_sim::{preset, PRESET_NAMES};
use ctlo_toolkit::metrics::{compute_ate, compute_rte, RTE_LENGTHS};
use ctlo_toolkit::points::{read_points, write_points, PointRecord};
use ctlo_toolkit::tum::{read_trajectory, write_trajectory};
use ctlo_toolkit::{run_stream, RunError};

#[derive(Parser)]
#[command(name = "ctlo", version, about = "Continuous-time LiDAR odometry tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a trajectory from a point file and write it as TUM.
    Run {
        /// `key = value` odometry configuration.
        #[arg(long)]
        config: PathBuf,
        /// Point file (binary, or CSV when named `*.csv`).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Overrides the configured registration mode.
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Simulate a named scenario.
    Simulate {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_points: PathBuf,
        /// Ground truth relative to the body frame at time zero.
        #[arg(long)]
        out_truth: PathBuf,
        /// Also write the matching odometry configuration.
        #[arg(long)]
        out_config: Option<PathBuf>,
        /// Ground-truth sample rate, Hz.
        #[arg(long, default_value_t = 100.0)]
        truth_rate: f64,
    },
    /// Compare an estimated trajectory with a reference.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Also report relative translational error.
        #[arg(long)]
        rte: bool,
        /// RTE segment lengths in meters.
        #[arg(long, value_delimiter = ',', default_values_t = RTE_LENGTHS)]
        segments: Vec<f64>,
        /// Write `t est_x est_y est_z ref_x ref_y ref_z error` rows of the
        /// aligned trajectories for plotting.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Compare every analytic Jacobian with central finite differences.
    CheckJacobians {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Data(String),
    Diverged(String),
}

impl Failure {
    fn data(e: impl std::fmt::Display) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run { config, input, output, mode } => run(config, input, output, mode),
        Command::Simulate { preset, seed, out_points, out_truth, out_config, truth_rate } => simulate(&preset, seed, out_points, out_truth, out_config, truth_rate),
        Command::Evaluate { est, reference, rte, segments, plot } => evaluate(est, reference, rte.then_some(segments), plot),
        Command::CheckJacobians { trials, seed } => check_jacobians(trials, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Diverged(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(config: PathBuf, input: PathBuf, output: PathBuf, mode: Option<Mode>) -> Result<(), Failure> {
    let text = fs::read_to_string(&config).map_err(|e| Failure::Data(format!("{}: {e}", config.display())))?;
    let mut cfg = OdometryConfig::parse(&text).map_err(|e| Failure::Data(format!("{}: {e}", config.display())))?;
    if let Some(mode) = mode {
        cfg.mode = mode;
        cfg.validate().map_err(Failure::data)?;
    }
    let points = read_points(&input).map_err(|e| Failure::Data(format!("{}: {e}", input.display())))?;
    let (out, counters) = match run_stream(cfg, points) {
        Ok(r) => r,
        Err(RunError::Pipeline(PipelineError::Solver(e))) => return Err(Failure::Diverged(e.to_string())),
        Err(e) => return Err(Failure::Data(format!("{}: {e}", input.display()))),
    };
    write_trajectory(&output, &out.knots).map_err(|e| Failure::Data(format!("{}: {e}", output.display())))?;
    let diverged = out.windows.iter().filter(|w| w.diverged).count();
    let converged = out.windows.iter().filter(|w| w.converged).count();
    eprintln!("windows={} converged={converged} diverged={diverged} knots={}", out.windows.len(), out.knots.len());
    eprintln!(
        "dropped: before_window={} unknown_sensor={} out_of_range={} out_of_order={} non_finite={} downsampled={}",
        counters.before_window, counters.unknown_sensor, counters.out_of_range, counters.out_of_order, counters.non_finite, counters.downsampled
    );
    if diverged > 0 {
        return Err(Failure::Diverged(format!("{diverged} windows diverged")));
    }
    Ok(())
}

fn simulate(name: &str, seed: u64, out_points: PathBuf, out_truth: PathBuf, out_config: Option<PathBuf>, truth_rate: f64) -> Result<(), Failure> {
    let p = preset(name, seed).ok_or_else(|| Failure::Data(format!("unknown preset `{name}`")))?;
    if !(truth_rate > 0.0 && truth_rate.is_finite()) {
        return Err(Failure::Data(format!("truth rate must be positive, got {truth_rate}")));
    }
    let records: Vec<PointRecord> = p.measurements().iter().map(PointRecord::from_measurement).collect::<Result<_, _>>().map_err(Failure::data)?;
    let n = records.len();
    write_points(&out_points, records).map_err(|e| Failure::Data(format!("{}: {e}", out_points.display())))?;
    let truth: Vec<TimedPose> = p.truth_samples(truth_rate).into_iter().map(|(t, pose)| TimedPose { t, pose }).collect();
    write_trajectory(&out_truth, &truth).map_err(|e| Failure::Data(format!("{}: {e}", out_truth.display())))?;
    if let Some(path) = out_config {
        fs::write(&path, p.odometry.to_text()).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    }
    eprintln!("preset={name} seed={seed} points={n} duration={}", p.sim.duration);
    Ok(())
}

fn evaluate(est: PathBuf, reference: PathBuf, rte: Option<Vec<f64>>, plot: Option<PathBuf>) -> Result<(), Failure> {
    let read = |p: &PathBuf| read_trajectory(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())));
    let (e, r) = (read(&est)?, read(&reference)?);
    let ate = compute_ate(&e, &r).map_err(Failure::data)?;
    let rte = rte.map(|lengths| compute_rte(&e, &r, &lengths)).transpose().map_err(Failure::data)?;

    println!("{:<14} {:>12}", "metric", "value");
    println!("{:<14} {:>12}", "pairs", ate.pairs);
    println!("{:<14} {:>12.6}", "ate_rmse [m]", ate.rmse);
    println!("{:<14} {:>12.6}", "ate_mean [m]", ate.mean);
    println!("{:<14} {:>12.6}", "ate_max [m]", ate.max);
    if let Some(rte) = &rte {
        println!("{:<14} {:>12.4}", "rte [%]", rte.percent);
        for (len, pct, n) in &rte.per_length {
            println!("{:<14} {:>12.4}", format!("  {len} m ({n})"), pct);
        }
    }
    println!();
    println!("pairs={}", ate.pairs);
    println!("ate_rmse={}", ate.rmse);
    println!("ate_mean={}", ate.mean);
    println!("ate_max={}", ate.max);
    println!("ate_rmse_x={}", ate.rmse_axis.x);
    println!("ate_rmse_y={}", ate.rmse_axis.y);
    println!("ate_rmse_z={}", ate.rmse_axis.z);
    if let Some(rte) = &rte {
        println!("rte_percent={}", rte.percent);
        println!("rte_segments={}", rte.segments);
    }

    if let Some(path) = plot {
        let mut s = Vec::new();
        let _ = writeln!(s, "# t est_x est_y est_z ref_x ref_y ref_z error");
        for (t, a, d) in &ate.matched {
            let _ = writeln!(s, "{t} {} {} {} {} {} {} {}", a.x, a.y, a.z, d.x, d.y, d.z, (a - d).norm());
        }
        fs::write(&path, s).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn check_jacobians(trials: usize, seed: u64) -> Result<(), Failure> {
    let cfg = CheckConfig { trials, seed, ..CheckConfig::default() };
    let reports = jacobian_check::run_all(&cfg);
    for r in &reports {
        println!(
            "{:<14} trials={} failures={} max_relative_error={:.3e} {}",
            r.name,
            r.trials,
            r.failures,
            r.max_relative_error,
            if r.passed() { "ok" } else { "FAILED" }
        );
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Failure::Diverged(format!("{failed} Jacobian suites exceed relative error {}", cfg.tolerance)));
    }
    Ok(())
}
