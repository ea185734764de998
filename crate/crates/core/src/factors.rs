//! Residuals and analytic Jacobians of the three energy terms: continuous-time
//! point-to-plane registration, kinematic smoothness between consecutive
//! segment twists, and the marginalization prior.
//!
//! Perturbations are right-multiplicative on every control pose,
//! `T <- T ⊕ xi`, and Jacobians are taken with respect to `xi`.

use nalgebra::{DMatrix, DVector, RowVector6};
use thiserror::Error;

use crate::liegroup::{left_jacobian_inv, right_jacobian, right_jacobian_inv, LieError, Mat6, Pose, Twist, Vec3, Vec6};
use crate::trajectory::SegmentIndex;
use crate::voxelmap::PlaneFit;

pub type Row6 = RowVector6<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FactorError {
    #[error("prior covers {expected} poses but {got} were supplied")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// One LiDAR return: sensor-frame point, absolute timestamp, sensor index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub p: Vec3,
    pub t: f64,
    pub sensor: usize,
}

impl Measurement {
    pub fn new(p: Vec3, t: f64, sensor: usize) -> Self {
        Self { p, t, sensor }
    }
}

/// Fixed extrinsics `T^B_{L_j}` mapping each sensor frame into the body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorRig {
    extrinsics: Vec<Pose>,
}

impl Default for SensorRig {
    fn default() -> Self {
        Self::single()
    }
}

impl SensorRig {
    pub fn new(extrinsics: Vec<Pose>) -> Self {
        Self { extrinsics }
    }

    /// One sensor coincident with the body frame.
    pub fn single() -> Self {
        Self { extrinsics: vec![Pose::identity()] }
    }

    pub fn len(&self) -> usize {
        self.extrinsics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.extrinsics.is_empty()
    }

    pub fn extrinsic(&self, sensor: usize) -> Option<&Pose> {
        self.extrinsics.get(sensor)
    }

    pub fn extrinsics(&self) -> &[Pose] {
        &self.extrinsics
    }

    /// The measurement expressed in the body frame.
    ///
    /// Panics if the sensor index has no extrinsic; callers filter first.
    #[inline]
    pub fn body_point(&self, m: &Measurement) -> Vec3 {
        self.extrinsics[m.sensor].act(&m.p)
    }
}

/// Which control poses the factor's reference pose depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Anchor {
    /// Interpolated inside segment `k` at fraction `alpha`.
    Segment { k: SegmentIndex, alpha: f64 },
    /// Directly one control pose (deskewed input).
    Knot(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricFactor {
    pub measurement: Measurement,
    pub plane: PlaneFit,
    pub anchor: Anchor,
    /// `1 / sigma_r^2`.
    pub weight: f64,
}

/// Residual and Jacobians of one point-to-plane term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricEval {
    pub residual: f64,
    pub j_prev: Row6,
    pub j_next: Row6,
}

/// Per-segment quantities shared by every point of the segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentLinearization {
    pub tau: Twist,
    pub jl_inv: Mat6,
    pub jr_inv: Mat6,
}

impl SegmentLinearization {
    pub fn new(start: &Pose, end: &Pose) -> Result<Self, LieError> {
        let tau = end.ominus(start)?;
        Ok(Self::from_twist(tau))
    }

    pub fn from_twist(tau: Twist) -> Self {
        Self { tau, jl_inv: left_jacobian_inv(&tau), jr_inv: right_jacobian_inv(&tau) }
    }
}

/// `n^T [R | -R [x]_x]`, derivative of `n^T (T x - q)` w.r.t. a right
/// perturbation of `T`.
#[inline]
fn plane_row(normal: &Vec3, pose: &Pose, x: &Vec3) -> Row6 {
    let nr = pose.rotation.matrix().tr_mul(normal);
    let nt = x.cross(&nr);
    Row6::new(nr.x, nr.y, nr.z, nt.x, nt.y, nt.z)
}

impl GeometricFactor {
    /// `n^T (pose * T^B_L * p - q)`.
    #[inline]
    pub fn residual_at(&self, pose: &Pose, rig: &SensorRig) -> f64 {
        let world = pose.act(&rig.body_point(&self.measurement));
        self.plane.normal.dot(&(world - self.plane.point))
    }

    /// Residual through the interpolated pose given the segment's start pose.
    #[inline]
    pub fn residual_in_segment(&self, start: &Pose, tau: &Twist, rig: &SensorRig) -> f64 {
        let alpha = match self.anchor {
            Anchor::Segment { alpha, .. } => alpha,
            Anchor::Knot(_) => 0.0,
        };
        self.residual_at(&start.oplus(&(*tau * alpha)), rig)
    }

    /// Continuous-time evaluation with the chain rule through the
    /// interpolation:
    /// `dphi/dT_{k-1} = (1 - a) Jr((a - 1) tau) Jl^-1(tau)`,
    /// `dphi/dT_k = a Jr(a tau) Jr^-1(tau)`.
    pub fn eval_segment(&self, start: &Pose, seg: &SegmentLinearization, rig: &SensorRig) -> GeometricEval {
        let alpha = match self.anchor {
            Anchor::Segment { alpha, .. } => alpha,
            Anchor::Knot(_) => 0.0,
        };
        let phi = start.oplus(&(seg.tau * alpha));
        let x = rig.body_point(&self.measurement);
        let residual = self.plane.normal.dot(&(phi.act(&x) - self.plane.point));
        let g = plane_row(&self.plane.normal, &phi, &x);
        let j_prev = if alpha < 1.0 {
            (g * right_jacobian(&(seg.tau * (alpha - 1.0)))) * seg.jl_inv * (1.0 - alpha)
        } else {
            Row6::zeros()
        };
        let j_next = if alpha > 0.0 {
            (g * right_jacobian(&(seg.tau * alpha))) * seg.jr_inv * alpha
        } else {
            Row6::zeros()
        };
        GeometricEval { residual, j_prev, j_next }
    }

    /// Evaluation against a single pose; the Jacobian is returned as `j_prev`.
    pub fn eval_knot(&self, pose: &Pose, rig: &SensorRig) -> GeometricEval {
        let x = rig.body_point(&self.measurement);
        let residual = self.plane.normal.dot(&(pose.act(&x) - self.plane.point));
        GeometricEval { residual, j_prev: plane_row(&self.plane.normal, pose, &x), j_next: Row6::zeros() }
    }
}

/// Point-to-plane residual and Jacobians w.r.t. the two bracketing controls.
pub fn geometric_eval(f: &GeometricFactor, t_prev: &Pose, t_next: &Pose, rig: &SensorRig) -> Result<GeometricEval, LieError> {
    match f.anchor {
        Anchor::Segment { .. } => Ok(f.eval_segment(t_prev, &SegmentLinearization::new(t_prev, t_next)?, rig)),
        Anchor::Knot(_) => Ok(f.eval_knot(t_prev, rig)),
    }
}

/// The twist the constrained segment is compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreviousTwist {
    /// Frozen pseudo-measurement from the previous converged window.
    Frozen(Twist),
    /// Twist of the preceding in-window segment, a live variable.
    Live,
}

/// Smoothness term `e = tau_k - tau_{k-1}` over consecutive segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicFactor {
    /// Segment whose twist is constrained.
    pub segment: SegmentIndex,
    pub previous: PreviousTwist,
    /// `1 / sigma_v^2`, applied to each component.
    pub weight: f64,
}

/// Residual plus Jacobians w.r.t. `T_{k-2}` (live previous only), `T_{k-1}`
/// and `T_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicEval {
    pub residual: Vec6,
    pub d_before: Option<Mat6>,
    pub d_prev: Mat6,
    pub d_next: Mat6,
}

/// Evaluates the smoothness term. `before` is `T_{k-2}` and is required when
/// the previous twist is live.
pub fn kinematic_eval(previous: &PreviousTwist, before: Option<&Pose>, t_prev: &Pose, t_next: &Pose) -> Result<KinematicEval, LieError> {
    let tau = t_next.ominus(t_prev)?;
    let jl_inv = left_jacobian_inv(&tau);
    let jr_inv = right_jacobian_inv(&tau);
    match previous {
        PreviousTwist::Frozen(pseudo) => Ok(KinematicEval {
            residual: (tau - *pseudo).as_vector().clone_owned(),
            d_before: None,
            d_prev: -jl_inv,
            d_next: jr_inv,
        }),
        PreviousTwist::Live => {
            let before = before.expect("live smoothness term needs T_{k-2}");
            let tau_prev = t_prev.ominus(before)?;
            let prev_jl_inv = left_jacobian_inv(&tau_prev);
            let prev_jr_inv = right_jacobian_inv(&tau_prev);
            Ok(KinematicEval {
                residual: (tau - tau_prev).as_vector().clone_owned(),
                d_before: Some(prev_jl_inv),
                d_prev: -jl_inv - prev_jr_inv,
                d_next: jr_inv,
            })
        }
    }
}

/// Quadratic energy `1/2 d^T H d + b^T d` with `d = s ⊖ s_bar`, carried
/// across window slides. Covers the first `lin_point.len()` controls of
/// the window.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalizationPrior {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub lin_point: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorEval {
    pub energy: f64,
    /// `b + H d`.
    pub gradient: DVector<f64>,
    /// The constant `H` (first-estimate Jacobians are the identity).
    pub hessian: DMatrix<f64>,
    pub delta: DVector<f64>,
}

impl MarginalizationPrior {
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>, lin_point: Vec<Pose>) -> Self {
        assert_eq!(hessian.nrows(), 6 * lin_point.len());
        assert_eq!(hessian.ncols(), 6 * lin_point.len());
        assert_eq!(gradient.len(), 6 * lin_point.len());
        Self { hessian, gradient, lin_point }
    }

    pub fn poses(&self) -> usize {
        self.lin_point.len()
    }

    /// Stacked `current_i ⊖ lin_point_i`.
    pub fn delta(&self, current: &[Pose]) -> Result<DVector<f64>, FactorError> {
        if current.len() != self.lin_point.len() {
            return Err(FactorError::DimensionMismatch { expected: self.lin_point.len(), got: current.len() });
        }
        let mut delta = DVector::zeros(6 * current.len());
        for (i, (c, l)) in current.iter().zip(&self.lin_point).enumerate() {
            delta.fixed_rows_mut::<6>(6 * i).copy_from(c.ominus(l)?.as_vector());
        }
        Ok(delta)
    }

    pub fn energy(&self, current: &[Pose]) -> Result<f64, FactorError> {
        let d = self.delta(current)?;
        Ok(0.5 * d.dot(&(&self.hessian * &d)) + self.gradient.dot(&d))
    }
}

/// Energy, gradient and Hessian of the prior at `current`.
///
/// The residual `d` is evaluated at the current poses while the Jacobian of
/// `d` is taken at the linearization point, where it is the identity.
pub fn prior_eval(prior: &MarginalizationPrior, current: &[Pose]) -> Result<PriorEval, FactorError> {
    let delta = prior.delta(current)?;
    let hd = &prior.hessian * &delta;
    let energy = 0.5 * delta.dot(&hd) + prior.gradient.dot(&delta);
    Ok(PriorEval { energy, gradient: &prior.gradient + hd, hessian: prior.hessian.clone(), delta })
}

/// Huber loss on a scalar residual: returns `(rho(e), weight)` where
/// `rho(e) = e^2` inside the threshold and `weight = rho'(e) / (2e)`.
#[inline]
pub fn huber(residual: f64, threshold: Option<f64>) -> (f64, f64) {
    let e2 = residual * residual;
    match threshold {
        Some(k) if residual.abs() > k => {
            let a = residual.abs();
            (2.0 * k * a - k * k, k / a)
        }
        _ => (e2, 1.0),
    }
}
