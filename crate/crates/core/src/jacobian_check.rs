//! Central finite-difference verification of the analytic Jacobians.
//!
//! Each suite draws random configurations, perturbs every control pose on
//! the right (`T ⊕ ±h e_i`) and compares the numerical derivative of the
//! residual with the analytic one. Only residual evaluations feed the
//! numerical side.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::factors::{kinematic_eval, Anchor, GeometricFactor, Measurement, PreviousTwist, SegmentLinearization, SensorRig};
use crate::liegroup::{left_jacobian_inv, right_jacobian, right_jacobian_inv, Pose, Twist, Vec3, Vec6};
use crate::trajectory::{interpolate, SegmentIndex};
use crate::voxelmap::PlaneFit;
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { trials: 200, seed: 0, step: 1e-6, tolerance: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    pub max_relative_error: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// `|A - N|_F / max(|N|_F, 1e-8)`.
pub fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).norm() / numeric.norm().max(1e-8)
}

fn unit(i: usize, h: f64) -> Twist {
    let mut v = Vec6::zeros();
    v[i] = h;
    Twist::from_vector(v)
}

fn random_twist(rng: &mut impl Rng, trans: f64, angle: f64) -> Twist {
    Twist::from_vector(Vec6::from_fn(|i, _| if i < 3 { rng.random_range(-trans..trans) } else { rng.random_range(-angle..angle) }))
}

fn random_pose(rng: &mut impl Rng) -> Pose {
    Pose::exp(&random_twist(rng, 3.0, 1.5))
}

/// Numerical Jacobian (rows = residual dim) of `f` w.r.t. a right
/// perturbation of `poses[which]`.
fn numeric_jacobian<F>(poses: &[Pose], which: usize, dim: usize, h: f64, f: F) -> DMatrix<f64>
where
    F: Fn(&[Pose]) -> Vec<f64>,
{
    let mut jac = DMatrix::zeros(dim, 6);
    for i in 0..6 {
        let d = unit(i, h);
        let mut plus = poses.to_vec();
        plus[which] = poses[which].oplus(&d);
        let mut minus = poses.to_vec();
        minus[which] = poses[which].oplus(&-d);
        let (fp, fm) = (f(&plus), f(&minus));
        for r in 0..dim {
            jac[(r, i)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

fn finish(name: &'static str, trials: usize, errors: impl Iterator<Item = f64>, tol: f64) -> SuiteReport {
    let (mut failures, mut max) = (0, 0.0f64);
    for e in errors {
        if !(e < tol) {
            failures += 1;
        }
        max = max.max(if e.is_nan() { f64::INFINITY } else { e });
    }
    SuiteReport { name, trials, failures, max_relative_error: max }
}

/// Point-to-plane residual through the interpolated pose.
pub fn check_geometric(cfg: &CheckConfig) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rig = SensorRig::new(vec![Pose::identity(), random_pose(&mut rng)]);
    let mut errors = Vec::with_capacity(2 * cfg.trials);
    for _ in 0..cfg.trials {
        let start = random_pose(&mut rng);
        let end = start.oplus(&random_twist(&mut rng, 1.0, 1.0));
        let alpha = rng.random_range(0.0..1.0);
        let f = GeometricFactor {
            measurement: Measurement::new(Vec3::from_fn(|_, _| rng.random_range(-20.0..20.0)), 0.0, rng.random_range(0..2)),
            plane: PlaneFit {
                normal: Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize(),
                point: Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
                planarity: 0.0,
            },
            anchor: Anchor::Segment { k: SegmentIndex(1), alpha },
            weight: 1.0,
        };
        let Ok(seg) = SegmentLinearization::new(&start, &end) else { continue };
        let ev = f.eval_segment(&start, &seg, &rig);
        let residual = |p: &[Pose]| vec![f.residual_in_segment(&p[0], &p[1].ominus(&p[0]).unwrap(), &rig)];
        let poses = [start, end];
        let n_prev = numeric_jacobian(&poses, 0, 1, cfg.step, residual);
        let n_next = numeric_jacobian(&poses, 1, 1, cfg.step, residual);
        errors.push(relative_error(&DMatrix::from_row_slice(1, 6, ev.j_prev.as_slice()), &n_prev));
        errors.push(relative_error(&DMatrix::from_row_slice(1, 6, ev.j_next.as_slice()), &n_next));
    }
    finish("geometric", cfg.trials, errors.into_iter(), cfg.tolerance)
}

/// Smoothness term, both frozen and live previous twist.
pub fn check_kinematic(cfg: &CheckConfig) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut errors = Vec::new();
    for trial in 0..cfg.trials {
        let a = random_pose(&mut rng);
        let b = a.oplus(&random_twist(&mut rng, 1.0, 1.0));
        let c = b.oplus(&random_twist(&mut rng, 1.0, 1.0));
        let poses = [a, b, c];
        let to_vec = |v: &Vec6| v.iter().copied().collect::<Vec<_>>();
        if trial % 2 == 0 {
            let pseudo = random_twist(&mut rng, 1.0, 1.0);
            let prev = PreviousTwist::Frozen(pseudo);
            let ev = kinematic_eval(&prev, None, &b, &c).unwrap();
            let res = |p: &[Pose]| to_vec(&kinematic_eval(&prev, None, &p[1], &p[2]).unwrap().residual);
            errors.push(relative_error(&dm(&ev.d_prev), &numeric_jacobian(&poses, 1, 6, cfg.step, res)));
            errors.push(relative_error(&dm(&ev.d_next), &numeric_jacobian(&poses, 2, 6, cfg.step, res)));
        } else {
            let prev = PreviousTwist::Live;
            let ev = kinematic_eval(&prev, Some(&a), &b, &c).unwrap();
            let res = |p: &[Pose]| to_vec(&kinematic_eval(&prev, Some(&p[0]), &p[1], &p[2]).unwrap().residual);
            errors.push(relative_error(&dm(&ev.d_before.unwrap()), &numeric_jacobian(&poses, 0, 6, cfg.step, res)));
            errors.push(relative_error(&dm(&ev.d_prev), &numeric_jacobian(&poses, 1, 6, cfg.step, res)));
            errors.push(relative_error(&dm(&ev.d_next), &numeric_jacobian(&poses, 2, 6, cfg.step, res)));
        }
    }
    finish("kinematic", cfg.trials, errors.into_iter(), cfg.tolerance)
}

/// Chain rule through the interpolation itself: `d phi / d T_{k-1}` and
/// `d phi / d T_k` against `phi(T ⊕ d) ⊖ phi(T)`.
pub fn check_interpolation(cfg: &CheckConfig) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut errors = Vec::new();
    for _ in 0..cfg.trials {
        let start = random_pose(&mut rng);
        let end = start.oplus(&random_twist(&mut rng, 1.0, 1.0));
        let alpha = rng.random_range(0.0..1.0);
        let tau = end.ominus(&start).unwrap();
        let phi = interpolate(&start, &tau, alpha);
        let d_prev = right_jacobian(&(tau * (alpha - 1.0))) * left_jacobian_inv(&tau) * (1.0 - alpha);
        let d_next = right_jacobian(&(tau * alpha)) * right_jacobian_inv(&tau) * alpha;
        let res = |p: &[Pose]| {
            let t = p[1].ominus(&p[0]).unwrap();
            interpolate(&p[0], &t, alpha).ominus(&phi).unwrap().as_vector().iter().copied().collect::<Vec<_>>()
        };
        let poses = [start, end];
        errors.push(relative_error(&dm(&d_prev), &numeric_jacobian(&poses, 0, 6, cfg.step, res)));
        errors.push(relative_error(&dm(&d_next), &numeric_jacobian(&poses, 1, 6, cfg.step, res)));
    }
    finish("interpolation", cfg.trials, errors.into_iter(), cfg.tolerance)
}

fn dm(m: &crate::liegroup::Mat6) -> DMatrix<f64> {
    DMatrix::from_column_slice(6, 6, m.as_slice())
}

/// All suites.
pub fn run_all(cfg: &CheckConfig) -> Vec<SuiteReport> {
    vec![check_geometric(cfg), check_kinematic(cfg), check_interpolation(cfg)]
}
