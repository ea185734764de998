//! Closed-loop helpers shared by the integration tests.

#![allow(dead_code)]

use std::time::{Duration, Instant};

use ctlo_core::pipeline::{query_pose, run, OdometryConfig, OdometryOutput, TimedPose};
use ctlo_sim::Preset;
use ctlo_toolkit::metrics::{compute_ate, AteReport};

pub struct ClosedLoop {
    pub output: OdometryOutput,
    /// Wall time of the odometry alone, simulation excluded.
    pub elapsed: Duration,
    /// Relative ground truth at every knot time.
    pub truth: Vec<TimedPose>,
}

impl ClosedLoop {
    pub fn knots(&self) -> &[TimedPose] {
        &self.output.knots
    }

    pub fn diverged(&self) -> bool {
        self.output.windows.iter().any(|w| w.diverged)
    }

    pub fn ate(&self) -> AteReport {
        compute_ate(self.knots(), &self.truth).expect("enough knots for ATE")
    }

    /// Largest knot translation error without alignment.
    pub fn max_knot_error(&self) -> f64 {
        self.knots().iter().zip(&self.truth).map(|(k, t)| (k.pose.translation - t.pose.translation).norm()).fold(0.0, f64::max)
    }
}

pub fn run_with(p: &Preset, config: OdometryConfig) -> ClosedLoop {
    let measurements = p.measurements();
    let start = Instant::now();
    let (output, _) = run(config, measurements).expect("pipeline run");
    let elapsed = start.elapsed();
    let truth = output.knots.iter().map(|k| TimedPose { t: k.t, pose: p.relative_pose(k.t) }).collect();
    ClosedLoop { output, elapsed, truth }
}

pub fn run_preset(p: &Preset) -> ClosedLoop {
    run_with(p, p.odometry.clone())
}

/// `a` resampled at the knot times of `b` that fall inside its span.
pub fn resample_at(a: &[TimedPose], b: &[TimedPose]) -> Vec<TimedPose> {
    b.iter().filter_map(|k| query_pose(a, k.t).ok().map(|pose| TimedPose { t: k.t, pose })).collect()
}
