//! End-to-end odometry: static map initialization, segment assignment of
//! incoming returns, window optimization, marginalization, map update and
//! pose output.

mod config;

use std::collections::VecDeque;

use thiserror::Error;

pub use config::{ConfigError, Mode, OdometryConfig};

use nalgebra::{DMatrix, DVector};

use crate::factors::{Anchor, MarginalizationPrior, Measurement, SensorRig};
use crate::liegroup::{Pose, Vec3};
use crate::solver::{self, associate, marginalize, optimize, sample_world_point, Sample, SolverConfig, SolverError, WindowState};
use crate::trajectory::{interpolate, SegmentIndex, Trajectory, TrajectoryError};
use crate::voxelmap::VoxelMap;

/// Prior information of the first control at the initialization pose.
const ANCHOR_WEIGHT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("no usable points during the initialization period")]
    EmptyInit,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("time {t} is outside the processed span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose,
}

/// Where a measurement went on ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Assignment {
    /// Used for map initialization.
    Init,
    /// Placed in the current window's segment `k`.
    Segment(SegmentIndex),
    /// Held for a later window (or, in deskewed mode, an incomplete scan).
    Buffered,
    Dropped(DropReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    BeforeWindow,
    UnknownSensor,
    OutOfRange,
    OutOfOrder,
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub before_window: usize,
    pub unknown_sensor: usize,
    pub out_of_range: usize,
    pub out_of_order: usize,
    pub non_finite: usize,
    pub downsampled: usize,
}

impl Counters {
    fn count(&mut self, reason: DropReason) {
        match reason {
            DropReason::BeforeWindow => self.before_window += 1,
            DropReason::UnknownSensor => self.unknown_sensor += 1,
            DropReason::OutOfRange => self.out_of_range += 1,
            DropReason::OutOfOrder => self.out_of_order += 1,
            DropReason::NonFinite => self.non_finite += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowStatus {
    /// Time of the knot finalized by this window.
    pub t: f64,
    pub converged: bool,
    pub diverged: bool,
    pub correspondences: usize,
    pub energy: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Segments (or scan poses) below the correspondence threshold.
    pub sparse_groups: usize,
    /// The marginalized block needed regularization.
    pub regularized: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OdometryOutput {
    pub knots: Vec<TimedPose>,
    pub windows: Vec<WindowStatus>,
}

/// Inserts the initialization points into a fresh map at the identity pose
/// and returns a stationary trajectory starting at `t0`.
pub fn initialize(points: &[Measurement], rig: &SensorRig, config: &OdometryConfig, t0: f64) -> Result<(VoxelMap, Trajectory), PipelineError> {
    let mut map = VoxelMap::new(config.map_config());
    let stored = map.insert(points.iter().filter(|m| m.sensor < rig.len()).map(|m| rig.body_point(m)));
    if stored == 0 {
        return Err(PipelineError::EmptyInit);
    }
    let controls = if config.mode == Mode::Deskewed { config.segments } else { config.segments + 1 };
    let trajectory = Trajectory::stationary(t0, config.dt, controls - 1, Pose::identity())?;
    Ok((map, trajectory))
}

enum Phase {
    Waiting,
    Initializing { start: f64, points: Vec<Measurement> },
    Running(Window),
}

struct Window {
    state: WindowState,
    /// Deskewed mode: timestamps of the scans assigned to controls so far.
    scan_times: Vec<f64>,
}

pub struct Odometry {
    config: OdometryConfig,
    solver: SolverConfig,
    rig: SensorRig,
    map: VoxelMap,
    phase: Phase,
    last_t: Vec<f64>,
    latest: f64,
    /// Continuous mode: returns beyond the window end.
    pending: VecDeque<Measurement>,
    /// Deskewed mode: the scan currently being received.
    open_scan: Option<(f64, Vec<Measurement>)>,
    /// Deskewed mode: complete scans not yet in the window.
    scans: VecDeque<(f64, Vec<Measurement>)>,
    output: OdometryOutput,
    counters: Counters,
    finished: bool,
}

impl Odometry {
    pub fn new(config: OdometryConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let rig = SensorRig::new(config.extrinsics.clone());
        Ok(Self {
            solver: config.solver_config(),
            map: VoxelMap::new(config.map_config()),
            last_t: vec![f64::NEG_INFINITY; rig.len()],
            rig,
            config,
            phase: Phase::Waiting,
            latest: f64::NEG_INFINITY,
            pending: VecDeque::new(),
            open_scan: None,
            scans: VecDeque::new(),
            output: OdometryOutput::default(),
            counters: Counters::default(),
            finished: false,
        })
    }

    pub fn config(&self) -> &OdometryConfig {
        &self.config
    }

    pub fn map(&self) -> &VoxelMap {
        &self.map
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn output(&self) -> &OdometryOutput {
        &self.output
    }

    pub fn is_initialized(&self) -> bool {
        matches!(self.phase, Phase::Running(_))
    }

    /// Current window, once initialized.
    pub fn window(&self) -> Option<&WindowState> {
        match &self.phase {
            Phase::Running(w) => Some(&w.state),
            _ => None,
        }
    }

    fn screen(&mut self, m: &Measurement) -> Option<DropReason> {
        let reason = if !(m.t.is_finite() && m.p.iter().all(|x| x.is_finite())) {
            Some(DropReason::NonFinite)
        } else if m.sensor >= self.rig.len() {
            Some(DropReason::UnknownSensor)
        } else if m.p.norm() > self.config.max_range {
            Some(DropReason::OutOfRange)
        } else if m.t < self.last_t[m.sensor] {
            Some(DropReason::OutOfOrder)
        } else {
            None
        };
        if let Some(r) = reason {
            self.counters.count(r);
        } else {
            self.last_t[m.sensor] = m.t;
            self.latest = self.latest.max(m.t);
        }
        reason
    }

    /// Buffers a batch and reports where each measurement went. Does not
    /// optimize; see [`Odometry::process_ready`] and [`Odometry::push`].
    pub fn ingest(&mut self, batch: &[Measurement]) -> Result<Vec<Assignment>, PipelineError> {
        let mut out = Vec::with_capacity(batch.len());
        for m in batch {
            if let Some(r) = self.screen(m) {
                out.push(Assignment::Dropped(r));
                continue;
            }
            out.push(self.route(*m)?);
        }
        Ok(out)
    }

    fn route(&mut self, m: Measurement) -> Result<Assignment, PipelineError> {
        match &mut self.phase {
            Phase::Waiting => {
                self.phase = Phase::Initializing { start: m.t, points: vec![m] };
                Ok(Assignment::Init)
            }
            Phase::Initializing { start, points } => {
                let t_init = *start + self.config.init_duration;
                if m.t < t_init {
                    points.push(m);
                    return Ok(Assignment::Init);
                }
                let points = std::mem::take(points);
                self.start_running(&points, t_init)?;
                self.route(m)
            }
            Phase::Running(w) => Ok(match self.config.mode {
                Mode::Continuous => {
                    let traj = &w.state.trajectory;
                    if m.t < traj.t0() {
                        self.counters.before_window += 1;
                        Assignment::Dropped(DropReason::BeforeWindow)
                    } else if m.t < traj.end() {
                        Assignment::Segment(w.state.push_timed(m)?)
                    } else {
                        self.pending.push_back(m);
                        Assignment::Buffered
                    }
                }
                Mode::Deskewed => {
                    let last_scan = w.scan_times.last().copied().or_else(|| self.scans.back().map(|s| s.0));
                    if last_scan.is_some_and(|t| m.t <= t) {
                        self.counters.before_window += 1;
                        return Ok(Assignment::Dropped(DropReason::BeforeWindow));
                    }
                    match &mut self.open_scan {
                        Some((t, pts)) if *t == m.t => pts.push(m),
                        Some((t, _)) if m.t < *t => {
                            self.counters.out_of_order += 1;
                            return Ok(Assignment::Dropped(DropReason::OutOfOrder));
                        }
                        open => {
                            if let Some(done) = open.take() {
                                self.scans.push_back(done);
                            }
                            *open = Some((m.t, vec![m]));
                        }
                    }
                    self.fill_scans();
                    Assignment::Buffered
                }
            }),
        }
    }

    fn start_running(&mut self, points: &[Measurement], t0: f64) -> Result<(), PipelineError> {
        let (map, trajectory) = initialize(points, &self.rig, &self.config, t0)?;
        self.map = map;
        let mut state = WindowState::new(trajectory);
        // The map was built at the identity, so the first control is pinned there.
        state.prior = Some(MarginalizationPrior::new(DMatrix::identity(6, 6) * ANCHOR_WEIGHT, DVector::zeros(6), vec![Pose::identity()]));
        self.phase = Phase::Running(Window { state, scan_times: Vec::new() });
        Ok(())
    }

    /// Deskewed mode: moves complete scans into free window slots.
    fn fill_scans(&mut self) {
        let Phase::Running(w) = &mut self.phase else { return };
        while w.scan_times.len() < w.state.controls().len() {
            let Some((t, pts)) = self.scans.pop_front() else { break };
            let knot = w.scan_times.len();
            for m in pts {
                w.state.push_knot(m, knot);
            }
            w.scan_times.push(t);
        }
    }

    fn window_ready(&self) -> bool {
        let Phase::Running(w) = &self.phase else { return false };
        match self.config.mode {
            Mode::Continuous => {
                let end = w.state.trajectory.end();
                let all = self.last_t.iter().filter(|t| t.is_finite()).all(|t| *t >= end);
                all || self.latest >= end + self.config.max_latency
            }
            Mode::Deskewed => w.scan_times.len() == w.state.controls().len(),
        }
    }

    /// Processes every full window.
    pub fn process_ready(&mut self) -> Result<Vec<WindowStatus>, PipelineError> {
        let mut statuses = Vec::new();
        while self.window_ready() {
            statuses.push(self.process_window(true)?);
        }
        Ok(statuses)
    }

    /// [`Odometry::ingest`] followed by [`Odometry::process_ready`].
    pub fn push(&mut self, batch: &[Measurement]) -> Result<Vec<WindowStatus>, PipelineError> {
        self.ingest(batch)?;
        self.process_ready()
    }

    fn cap_samples(&mut self, state: &mut WindowState) {
        let Some(cap) = self.config.max_points_per_segment else { return };
        let groups = state.controls().len() + 1;
        let group = |s: &Sample| match s.anchor {
            Anchor::Segment { k, .. } => k.get(),
            Anchor::Knot(i) => i,
        };
        let mut counts = vec![0usize; groups];
        for s in &state.samples {
            counts[group(s)] += 1;
        }
        if counts.iter().all(|c| *c <= cap) {
            return;
        }
        let mut seen = vec![0usize; groups];
        let before = state.samples.len();
        state.samples.retain(|s| {
            let g = group(s);
            let i = seen[g];
            seen[g] += 1;
            let n = counts[g];
            // Keep sample i when it starts a new stride bucket.
            n <= cap || (i * cap) / n != ((i + 1) * cap) / n
        });
        self.counters.downsampled += before - state.samples.len();
    }

    fn solve(&self, state: &mut WindowState) -> (Option<solver::OptimizeReport>, bool) {
        let initial = state.trajectory.clone();
        match optimize(state, &self.map, &self.rig, &self.solver) {
            Ok(r) if controls_finite(state.controls()) => return (Some(r), false),
            _ => {}
        }
        state.trajectory = initial.clone();
        let mut retry = self.solver.clone();
        retry.damping.lambda *= 2.0;
        match optimize(state, &self.map, &self.rig, &retry) {
            Ok(r) if controls_finite(state.controls()) => (Some(r), false),
            _ => {
                state.trajectory = initial;
                (None, true)
            }
        }
    }

    fn process_window(&mut self, slide: bool) -> Result<WindowStatus, PipelineError> {
        let Phase::Running(mut w) = std::mem::replace(&mut self.phase, Phase::Waiting) else {
            unreachable!("process_window requires a running window");
        };
        self.cap_samples(&mut w.state);
        let (report, diverged) = self.solve(&mut w.state);
        let association = match &report {
            Some(r) => r.association.clone(),
            None => associate(&w.state, &self.map, &self.rig, &self.solver)?,
        };
        let t_first = match self.config.mode {
            Mode::Continuous => w.state.trajectory.t0(),
            Mode::Deskewed => w.scan_times[0],
        };
        let mut status = WindowStatus {
            t: t_first,
            converged: report.as_ref().is_some_and(|r| r.converged),
            diverged,
            correspondences: association.factors.len(),
            energy: report.as_ref().map_or(f64::NAN, |r| r.energy),
            outer_iterations: report.as_ref().map_or(0, |r| r.outer_iterations),
            inner_iterations: report.as_ref().map_or(0, |r| r.inner_iterations),
            sparse_groups: association.warnings.len(),
            regularized: false,
        };
        if !slide {
            self.phase = Phase::Running(w);
            self.output.windows.push(status.clone());
            return Ok(status);
        }

        let prior = match marginalize(&w.state, &association, &self.rig, &self.solver) {
            Ok(m) => {
                status.regularized = m.regularized;
                Some(m.prior)
            }
            Err(_) => None,
        };
        let controls = w.state.controls().to_vec();
        self.output.knots.push(TimedPose { t: t_first, pose: controls[0] });
        let predicted = match self.config.mode {
            Mode::Continuous => w.state.trajectory.predict_next()?,
            Mode::Deskewed => {
                let n = controls.len();
                controls[n - 1].oplus(&controls[n - 1].ominus(&controls[n - 2]).map_err(SolverError::from)?)
            }
        };
        let departed = w.state.slide(predicted, prior)?;
        let rig = &self.rig;
        let world: Vec<Vec3> = departed.iter().filter_map(|s| sample_world_point(s, &controls, rig).ok()).collect();
        self.map.insert(world);
        self.map.cull(&controls[controls.len() - 1].translation);

        match self.config.mode {
            Mode::Continuous => {
                let end = w.state.trajectory.end();
                let mut keep = VecDeque::with_capacity(self.pending.len());
                for m in self.pending.drain(..) {
                    if m.t < end {
                        w.state.push_timed(m)?;
                    } else {
                        keep.push_back(m);
                    }
                }
                self.pending = keep;
            }
            Mode::Deskewed => {
                w.scan_times.remove(0);
            }
        }
        self.phase = Phase::Running(w);
        self.fill_scans();
        self.output.windows.push(status.clone());
        Ok(status)
    }

    /// Flushes buffered data: processes every full window, then optimizes
    /// the last partial window and emits its remaining knots.
    pub fn finish(&mut self) -> Result<&OdometryOutput, PipelineError> {
        if self.finished {
            return Ok(&self.output);
        }
        self.finished = true;
        if let Phase::Initializing { start, points } = &mut self.phase {
            let (start, points) = (*start, std::mem::take(points));
            self.start_running(&points, start + self.config.init_duration)?;
        }
        if let Some(done) = self.open_scan.take() {
            self.scans.push_back(done);
            self.fill_scans();
        }
        self.process_ready()?;
        if matches!(self.phase, Phase::Waiting) {
            return Err(PipelineError::EmptyInit);
        }
        // Continuous mode: drain trailing buffered returns window by window.
        while self.config.mode == Mode::Continuous && !self.pending.is_empty() {
            self.process_window(true)?;
        }
        let has_samples = self.window().is_some_and(|s| !s.samples.is_empty());
        if has_samples {
            self.process_window(false)?;
        }
        let Phase::Running(w) = &self.phase else { unreachable!() };
        let controls = w.state.controls();
        match self.config.mode {
            Mode::Continuous => {
                let traj = &w.state.trajectory;
                for (i, pose) in controls.iter().enumerate() {
                    let t = traj.knot_time(i);
                    if i == 0 || (has_samples && t <= self.latest) {
                        self.output.knots.push(TimedPose { t, pose: *pose });
                    }
                }
            }
            Mode::Deskewed => {
                for (t, pose) in w.scan_times.iter().zip(controls) {
                    self.output.knots.push(TimedPose { t: *t, pose: *pose });
                }
            }
        }
        Ok(&self.output)
    }

    /// Pose at `t` interpolated over the finalized knots.
    pub fn query_pose(&self, t: f64) -> Result<Pose, PipelineError> {
        query_pose(&self.output.knots, t)
    }

    /// All finalized knots.
    pub fn export(&self) -> &[TimedPose] {
        &self.output.knots
    }
}

fn controls_finite(controls: &[Pose]) -> bool {
    controls.iter().all(Pose::is_finite)
}

/// Interpolates between the bracketing knots of a finalized trajectory.
pub fn query_pose(knots: &[TimedPose], t: f64) -> Result<Pose, PipelineError> {
    let (Some(first), Some(last)) = (knots.first(), knots.last()) else {
        return Err(PipelineError::OutOfSpan { t, start: f64::NAN, end: f64::NAN });
    };
    if !(t >= first.t && t <= last.t) {
        return Err(PipelineError::OutOfSpan { t, start: first.t, end: last.t });
    }
    let i = knots.partition_point(|k| k.t <= t);
    let a = &knots[i - 1];
    if a.t == t || i == knots.len() {
        return Ok(a.pose);
    }
    let b = &knots[i];
    let alpha = (t - a.t) / (b.t - a.t);
    let tau = b.pose.ominus(&a.pose).map_err(SolverError::from)?;
    Ok(interpolate(&a.pose, &tau, alpha))
}

/// Runs a whole recording through a fresh pipeline.
pub fn run<I>(config: OdometryConfig, measurements: I) -> Result<(OdometryOutput, Counters), PipelineError>
where
    I: IntoIterator<Item = Measurement>,
{
    let mut odo = Odometry::new(config)?;
    let mut batch = Vec::with_capacity(1024);
    for m in measurements {
        batch.push(m);
        if batch.len() == batch.capacity() {
            odo.push(&batch)?;
            batch.clear();
        }
    }
    odo.push(&batch)?;
    odo.finish()?;
    Ok((odo.output.clone(), odo.counters))
}
