//! Sliding-window Gauss-Newton over the `K + 1` control poses: association,
//! normal-equation assembly, damped iteration and Schur marginalization.

mod normal;
mod window;

use std::io::{self, Write};

use thiserror::Error;

use crate::factors::{Anchor, FactorError, GeometricFactor, KinematicFactor, MarginalizationPrior, Measurement, PreviousTwist, SensorRig};
use crate::liegroup::{LieError, Pose, Twist};
use crate::trajectory::{interpolate, SegmentIndex, Trajectory, TrajectoryError};
use crate::voxelmap::VoxelMap;

pub use normal::{schur_complement, solve_damped, step, Damping, LeastSquares, NormalEquations, SchurResult, StepOutcome};
pub use window::{EnergyTerms, WindowProblem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("normal equations are singular even with maximum damping")]
    Singular,
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// How the smoothness term sees the previous segment's twist for `k >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothness {
    /// Both twists are live variables (terms span three poses).
    #[default]
    Live,
    /// The previous twist is frozen at its value at the start of each outer
    /// round, dropping the cross-segment Jacobian.
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub sigma_r: f64,
    /// `f64::INFINITY` disables the smoothness term.
    pub sigma_v: f64,
    pub huber: Option<f64>,
    /// Correspondences whose nearest map point is farther are rejected.
    pub max_correspondence_distance: f64,
    /// Correspondences farther than this from their plane are rejected.
    pub max_plane_residual: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub increment_tolerance: f64,
    /// An outer round that moves the state less than this ends the loop
    /// without another re-association.
    pub reassociation_tolerance: f64,
    pub damping: Damping,
    pub smoothness: Smoothness,
    pub min_correspondences: usize,
    /// Record one row per inner iteration.
    pub diagnostics: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sigma_r: 0.1,
            sigma_v: 0.05,
            huber: Some(0.3),
            max_correspondence_distance: 0.8,
            max_plane_residual: 0.1,
            outer_iterations: 5,
            inner_iterations: 10,
            increment_tolerance: 1e-6,
            reassociation_tolerance: 1e-3,
            damping: Damping::default(),
            smoothness: Smoothness::Live,
            min_correspondences: 50,
            diagnostics: false,
        }
    }
}

impl SolverConfig {
    pub fn geometric_weight(&self) -> f64 {
        1.0 / (self.sigma_r * self.sigma_r)
    }

    pub fn kinematic_weight(&self) -> f64 {
        if self.sigma_v.is_finite() {
            1.0 / (self.sigma_v * self.sigma_v)
        } else {
            0.0
        }
    }
}

/// A measurement bound to the control poses it constrains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub measurement: Measurement,
    pub anchor: Anchor,
}

/// Controls, carried prior and the measurements inside the window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowState {
    pub trajectory: Trajectory,
    pub prior: Option<MarginalizationPrior>,
    /// Converged twist of the segment that left the window last; the
    /// smoothness reference for segment 1.
    pub pseudo_twist: Twist,
    pub samples: Vec<Sample>,
}

impl WindowState {
    pub fn new(trajectory: Trajectory) -> Self {
        Self { trajectory, prior: None, pseudo_twist: Twist::zero(), samples: Vec::new() }
    }

    pub fn controls(&self) -> &[Pose] {
        self.trajectory.controls()
    }

    /// Anchors by timestamp; fails outside `[t0, tK)`.
    pub fn push_timed(&mut self, m: Measurement) -> Result<SegmentIndex, TrajectoryError> {
        let (k, alpha) = self.trajectory.locate(m.t)?;
        self.samples.push(Sample { measurement: m, anchor: Anchor::Segment { k, alpha } });
        Ok(k)
    }

    /// Anchors directly to control `knot`.
    pub fn push_knot(&mut self, m: Measurement, knot: usize) {
        assert!(knot < self.controls().len());
        self.samples.push(Sample { measurement: m, anchor: Anchor::Knot(knot) });
    }

    /// Smoothness terms for every segment, the first one against the
    /// frozen pseudo-twist.
    pub fn kinematic_factors(&self, cfg: &SolverConfig, frozen_from: &[Pose]) -> Vec<KinematicFactor> {
        let weight = cfg.kinematic_weight();
        if weight == 0.0 {
            return Vec::new();
        }
        let segments = self.controls().len() - 1;
        (1..=segments)
            .map(|k| {
                let previous = if k == 1 {
                    PreviousTwist::Frozen(self.pseudo_twist)
                } else {
                    match cfg.smoothness {
                        Smoothness::Live => PreviousTwist::Live,
                        Smoothness::Frozen => PreviousTwist::Frozen(frozen_from[k - 1].ominus(&frozen_from[k - 2]).unwrap_or_else(|_| Twist::zero())),
                    }
                };
                KinematicFactor { segment: SegmentIndex(k), previous, weight }
            })
            .collect()
    }

    /// Drops `T_0`, the samples that only touched it and re-anchors the rest.
    /// Returns the departed samples; map them with the pre-slide trajectory.
    pub fn slide(&mut self, predicted: Pose, prior: Option<MarginalizationPrior>) -> Result<Vec<Sample>, SolverError> {
        let controls = self.controls();
        self.pseudo_twist = controls[1].ominus(&controls[0])?;
        self.trajectory = self.trajectory.advance(predicted);
        self.prior = prior;
        let mut departed = Vec::new();
        let mut kept = Vec::with_capacity(self.samples.len());
        for s in self.samples.drain(..) {
            match s.anchor {
                Anchor::Segment { k, alpha } if k.get() > 1 => kept.push(Sample { anchor: Anchor::Segment { k: SegmentIndex(k.get() - 1), alpha }, ..s }),
                Anchor::Knot(i) if i > 0 => kept.push(Sample { anchor: Anchor::Knot(i - 1), ..s }),
                _ => departed.push(s),
            }
        }
        self.samples = kept;
        Ok(departed)
    }
}

/// World-frame position of a sample under the given controls.
pub fn sample_world_point(sample: &Sample, controls: &[Pose], rig: &SensorRig) -> Result<crate::liegroup::Vec3, LieError> {
    let pose = sample_pose(&sample.anchor, controls)?;
    Ok(pose.act(&rig.body_point(&sample.measurement)))
}

pub fn sample_pose(anchor: &Anchor, controls: &[Pose]) -> Result<Pose, LieError> {
    Ok(match *anchor {
        Anchor::Segment { k, alpha } => {
            let k = k.get();
            if alpha == 0.0 {
                controls[k - 1]
            } else {
                interpolate(&controls[k - 1], &controls[k].ominus(&controls[k - 1])?, alpha)
            }
        }
        Anchor::Knot(i) => controls[i],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Warning {
    /// A segment (or scan pose, in knot mode) has too few correspondences.
    FewCorrespondences { group: usize, count: usize },
}

/// Geometric factors from the current association.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// Sorted by anchor.
    pub factors: Vec<GeometricFactor>,
    /// Valid correspondences per segment `k` (index `k`; index 0 unused) or
    /// per knot in knot mode.
    pub counts: Vec<usize>,
    pub warnings: Vec<Warning>,
}

fn group_of(anchor: &Anchor) -> usize {
    match *anchor {
        Anchor::Segment { k, .. } => k.get(),
        Anchor::Knot(i) => i,
    }
}

/// Nearest neighbor plus plane fit for every sample at the current controls.
pub fn associate(state: &WindowState, map: &VoxelMap, rig: &SensorRig, cfg: &SolverConfig) -> Result<Association, SolverError> {
    let controls = state.controls();
    let weight = cfg.geometric_weight();
    let max_d2 = cfg.max_correspondence_distance * cfg.max_correspondence_distance;
    let mut factors = Vec::with_capacity(state.samples.len());
    let mut seg_cache: Option<(usize, Twist)> = None;
    let mut knot_mode = false;
    for s in &state.samples {
        let pose = match s.anchor {
            Anchor::Segment { k, alpha } => {
                let k = k.get();
                let tau = match seg_cache {
                    Some((ck, tau)) if ck == k => tau,
                    _ => {
                        let tau = controls[k].ominus(&controls[k - 1])?;
                        seg_cache = Some((k, tau));
                        tau
                    }
                };
                interpolate(&controls[k - 1], &tau, alpha)
            }
            Anchor::Knot(i) => {
                knot_mode = true;
                controls[i]
            }
        };
        let world = pose.act(&rig.body_point(&s.measurement));
        let Ok(plane) = map.fit_plane(&world) else { continue };
        if (world - plane.point).norm_squared() > max_d2 {
            continue;
        }
        if plane.normal.dot(&(world - plane.point)).abs() > cfg.max_plane_residual {
            continue;
        }
        factors.push(GeometricFactor { measurement: s.measurement, plane, anchor: s.anchor, weight });
    }
    let mut counts = vec![0; controls.len()];
    for f in &factors {
        counts[group_of(&f.anchor)] += 1;
    }
    factors.sort_by_key(|f| group_of(&f.anchor));
    let groups = if knot_mode { 0..controls.len() } else { 1..controls.len() };
    let warnings = groups.filter(|&g| counts[g] < cfg.min_correspondences).map(|g| Warning::FewCorrespondences { group: g, count: counts[g] }).collect();
    Ok(Association { factors, counts, warnings })
}

/// Normal equations of the full window energy with fresh correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub eqs: NormalEquations,
    pub terms: EnergyTerms,
    pub association: Association,
}

pub fn assemble(state: &WindowState, map: &VoxelMap, rig: &SensorRig, cfg: &SolverConfig) -> Result<Assembly, SolverError> {
    let association = associate(state, map, rig, cfg)?;
    let kinematic = state.kinematic_factors(cfg, state.controls());
    let problem = WindowProblem { geometric: &association.factors, kinematic: &kinematic, prior: state.prior.as_ref(), rig, huber: cfg.huber };
    let (eqs, terms) = problem.evaluate(state.controls())?;
    Ok(Assembly { eqs, terms, association })
}

/// One inner iteration for the diagnostics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub outer: usize,
    pub inner: usize,
    pub terms: EnergyTerms,
    pub increment_norm: f64,
    pub damping: f64,
    pub accepted: bool,
}

pub fn write_diagnostics_csv<W: Write>(records: &[IterationRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "outer,inner,e_reg,e_kine,e_marg,increment_norm,damping,accepted")?;
    for r in records {
        writeln!(out, "{},{},{:e},{:e},{:e},{:e},{:e},{}", r.outer, r.inner, r.terms.reg, r.terms.kine, r.terms.marg, r.increment_norm, r.damping, r.accepted as u8)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub energy: f64,
    pub terms: EnergyTerms,
    /// Association of the final outer round, reused for marginalization.
    pub association: Association,
    pub records: Vec<IterationRecord>,
}

/// Alternates re-association with damped Gauss-Newton until the increment
/// vanishes or the iteration caps are hit. Updates `state` in place.
pub fn optimize(state: &mut WindowState, map: &VoxelMap, rig: &SensorRig, cfg: &SolverConfig) -> Result<OptimizeReport, SolverError> {
    let mut damping = cfg.damping;
    let mut records = Vec::new();
    let mut inner_total = 0;
    let mut converged = false;
    let mut outer_done = 0;
    let mut association = Association::default();
    let mut kinematic = Vec::new();
    for outer in 0..cfg.outer_iterations.max(1) {
        outer_done = outer + 1;
        association = associate(state, map, rig, cfg)?;
        kinematic = state.kinematic_factors(cfg, state.controls());
        let problem = WindowProblem { geometric: &association.factors, kinematic: &kinematic, prior: state.prior.as_ref(), rig, huber: cfg.huber };
        let mut poses = state.controls().to_vec();
        let mut eqs = problem.linearize(&poses)?;
        let mut moved = 0.0;
        let mut inner_converged = false;
        for inner in 0..cfg.inner_iterations {
            let out = step(&problem, &poses, &eqs, &mut damping)?;
            inner_total += 1;
            if out.accepted {
                poses = out.state;
                moved += out.increment_norm;
            }
            if cfg.diagnostics {
                let terms = problem.energy_terms(&poses)?;
                records.push(IterationRecord { outer, inner, terms, increment_norm: out.increment_norm, damping: damping.lambda, accepted: out.accepted });
            }
            if !out.accepted || out.increment_norm < cfg.increment_tolerance {
                inner_converged = true;
                break;
            }
            eqs = problem.linearize(&poses)?;
        }
        state.trajectory.set_controls(poses);
        if inner_converged && moved < cfg.reassociation_tolerance {
            converged = true;
            break;
        }
    }
    let problem = WindowProblem { geometric: &association.factors, kinematic: &kinematic, prior: state.prior.as_ref(), rig, huber: cfg.huber };
    let terms = problem.energy_terms(state.controls())?;
    Ok(OptimizeReport { converged, outer_iterations: outer_done, inner_iterations: inner_total, energy: terms.total(), terms, association, records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marginalization {
    /// Prior over the current `T_1`, which is `T_0` after the slide.
    pub prior: MarginalizationPrior,
    /// The `T_0` block was singular and had to be regularized.
    pub regularized: bool,
}

/// Schur-complements `T_0` out of every term that touches it.
///
/// The live smoothness term of segment 2 also touches `T_0`; it is left out
/// because the next window re-creates it as its segment-1 term against the
/// frozen pseudo-twist `tau_1`.
pub fn marginalize(state: &WindowState, association: &Association, rig: &SensorRig, cfg: &SolverConfig) -> Result<Marginalization, SolverError> {
    let controls = &state.controls()[..2];
    let touches_first = |a: &Anchor| matches!(*a, Anchor::Segment { k, .. } if k.get() == 1) || *a == Anchor::Knot(0);
    let geometric: Vec<GeometricFactor> = association.factors.iter().filter(|f| touches_first(&f.anchor)).copied().collect();
    let kinematic: Vec<KinematicFactor> = state.kinematic_factors(cfg, state.controls()).into_iter().filter(|k| k.segment.get() == 1).collect();
    let prior = match &state.prior {
        Some(p) if p.poses() > 2 => return Err(FactorError::DimensionMismatch { expected: 2, got: p.poses() }.into()),
        p => p.as_ref(),
    };
    let problem = WindowProblem { geometric: &geometric, kinematic: &kinematic, prior, rig, huber: cfg.huber };
    let eqs = problem.linearize(&controls.to_vec())?;
    let s = schur_complement(&eqs.h, &eqs.b, 6);
    Ok(Marginalization { prior: MarginalizationPrior::new(s.h, s.b, vec![controls[1]]), regularized: s.regularized })
}
