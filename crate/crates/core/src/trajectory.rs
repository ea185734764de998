//! Piecewise-linear continuous-time trajectory over `[t0, tK)`.
//!
//! `K` uniform segments of length `dt` are spanned by `K + 1` control poses.
//! Inside segment `k` (covering `[t_{k-1}, t_k)`) the pose at `t` is
//! `T_{k-1} ⊕ (alpha * tau_k)` with `alpha = (t - t_{k-1}) / dt` and
//! `tau_k = T_k ⊖ T_{k-1}`.
//!
//! The end time `tK` is *not* part of the window: it belongs to the next
//! window after [`Trajectory::advance`].
//!
//! Knot times are computed from an integer knot counter, so the same
//! physical knot keeps a bit-identical timestamp across window slides.

use thiserror::Error;

use crate::liegroup::{LieError, Pose, Twist};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("a trajectory needs at least two control poses, got {0}")]
    TooFewControls(usize),
    #[error("segment length must be positive and finite, got {0}")]
    InvalidDt(f64),
    #[error("time {t} is outside the window [{start}, {end})")]
    OutOfWindow { t: f64, start: f64, end: f64 },
    #[error("segment {k} is outside 1..={segments}")]
    SegmentOutOfRange { k: usize, segments: usize },
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// 1-based segment index; segment `k` covers `[t_{k-1}, t_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentIndex(pub usize);

impl SegmentIndex {
    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    /// Index of the segment's first control pose.
    #[inline]
    pub fn start_knot(self) -> usize {
        self.0 - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    origin: f64,
    first_knot: u64,
    dt: f64,
    controls: Vec<Pose>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, controls: Vec<Pose>) -> Result<Self, TrajectoryError> {
        Self::with_origin(t0, 0, dt, controls)
    }

    /// Knot `i` of this trajectory sits at `origin + (first_knot + i) * dt`.
    pub fn with_origin(origin: f64, first_knot: u64, dt: f64, controls: Vec<Pose>) -> Result<Self, TrajectoryError> {
        if controls.len() < 2 {
            return Err(TrajectoryError::TooFewControls(controls.len()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TrajectoryError::InvalidDt(dt));
        }
        Ok(Self { origin, first_knot, dt, controls })
    }

    /// `segments` segments, every control equal to `pose`.
    pub fn stationary(t0: f64, dt: f64, segments: usize, pose: Pose) -> Result<Self, TrajectoryError> {
        Self::new(t0, dt, vec![pose; segments + 1])
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn segments(&self) -> usize {
        self.controls.len() - 1
    }

    #[inline]
    pub fn controls(&self) -> &[Pose] {
        &self.controls
    }

    /// Replaces the control poses; the count must not change.
    pub fn set_controls(&mut self, controls: Vec<Pose>) {
        assert_eq!(controls.len(), self.controls.len(), "control count changed");
        self.controls = controls;
    }

    #[inline]
    pub fn origin(&self) -> f64 {
        self.origin
    }

    #[inline]
    pub fn first_knot(&self) -> u64 {
        self.first_knot
    }

    #[inline]
    pub fn knot_time(&self, i: usize) -> f64 {
        self.origin + (self.first_knot + i as u64) as f64 * self.dt
    }

    #[inline]
    pub fn t0(&self) -> f64 {
        self.knot_time(0)
    }

    /// Exclusive end of the window.
    #[inline]
    pub fn end(&self) -> f64 {
        self.knot_time(self.segments())
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0() && t < self.end()
    }

    /// Segment containing `t` and the interpolation fraction in `[0, 1)`.
    pub fn locate(&self, t: f64) -> Result<(SegmentIndex, f64), TrajectoryError> {
        if !self.contains(t) {
            return Err(TrajectoryError::OutOfWindow { t, start: self.t0(), end: self.end() });
        }
        let k_max = self.segments() - 1;
        let mut i = (((t - self.t0()) / self.dt).floor().max(0.0) as usize).min(k_max);
        // Settle rounding so that knot_time(i) <= t < knot_time(i + 1).
        while i < k_max && t >= self.knot_time(i + 1) {
            i += 1;
        }
        while i > 0 && t < self.knot_time(i) {
            i -= 1;
        }
        let alpha = ((t - self.knot_time(i)) / self.dt).clamp(0.0, 1.0);
        Ok((SegmentIndex(i + 1), alpha))
    }

    /// `tau_k = T_k ⊖ T_{k-1}`.
    pub fn segment_twist(&self, k: SegmentIndex) -> Result<Twist, TrajectoryError> {
        if k.0 == 0 || k.0 > self.segments() {
            return Err(TrajectoryError::SegmentOutOfRange { k: k.0, segments: self.segments() });
        }
        Ok(self.controls[k.0].ominus(&self.controls[k.0 - 1])?)
    }

    pub fn pose_at(&self, t: f64) -> Result<Pose, TrajectoryError> {
        let (k, alpha) = self.locate(t)?;
        if alpha == 0.0 {
            return Ok(self.controls[k.start_knot()]);
        }
        let tau = self.segment_twist(k)?;
        Ok(interpolate(&self.controls[k.start_knot()], &tau, alpha))
    }

    /// Slides the window by one segment: drops `T_0` and appends `predicted`.
    pub fn advance(&self, predicted: Pose) -> Trajectory {
        let mut controls = Vec::with_capacity(self.controls.len());
        controls.extend_from_slice(&self.controls[1..]);
        controls.push(predicted);
        Trajectory { origin: self.origin, first_knot: self.first_knot + 1, dt: self.dt, controls }
    }

    /// `T_K ⊕ (T_K ⊖ T_{K-1})`, the constant-velocity guess for the next knot.
    pub fn predict_next(&self) -> Result<Pose, TrajectoryError> {
        let last = self.segments();
        let tau = self.segment_twist(SegmentIndex(last))?;
        Ok(self.controls[last].oplus(&tau))
    }
}

/// `start ⊕ (alpha * tau)`.
#[inline]
pub fn interpolate(start: &Pose, tau: &Twist, alpha: f64) -> Pose {
    start.oplus(&(*tau * alpha))
}
