//! SO(3)/SE(3) calculus with right-perturbation conventions.
//!
//! Tangent vectors of SE(3) are ordered translation first: `(rho, theta)`.
//! `T ⊕ tau = T * Exp(tau)` and `T1 ⊖ T2 = Log(T2^-1 * T1)`. Jacobians are
//! the full coupled 6x6 forms, with `Jl(tau) = Jr(-tau)`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix6, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat6 = Matrix6<f64>;

/// Below this rotation angle the closed-form coefficients are replaced by
/// their Taylor series. The series are carried to enough terms that they are
/// exact to machine precision over the whole branch.
const SERIES_ANGLE: f64 = 1e-2;

/// Rotations closer than this to pi have no unique logarithm.
const PI_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum LieError {
    #[error("rotation angle {angle} is at pi; the logarithm is not unique")]
    AngleAtPi { angle: f64 },
}

/// `[v]_x`, the cross-product matrix.
#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[inline]
fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Coefficients of the SO(3) exponential and its Jacobians.
///
/// `a = sin(t)/t`, `b = (1 - cos t)/t^2`, `c = (t - sin t)/t^3`,
/// `d = 1/t^2 - (1 + cos t)/(2 t sin t)`.
#[derive(Clone, Copy)]
struct So3Coeffs {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl So3Coeffs {
    #[inline]
    fn new(angle_sq: f64) -> Self {
        let angle = angle_sq.sqrt();
        if angle < SERIES_ANGLE {
            let t2 = angle_sq;
            let t4 = t2 * t2;
            Self {
                a: 1.0 - t2 / 6.0 + t4 / 120.0 - t4 * t2 / 5040.0,
                b: 0.5 - t2 / 24.0 + t4 / 720.0 - t4 * t2 / 40320.0,
                c: 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t4 * t2 / 362880.0,
                d: 1.0 / 12.0 + t2 / 720.0 + t4 / 30240.0 + t4 * t2 / 1209600.0,
            }
        } else {
            let s = angle.sin();
            let (hs, hc) = (0.5 * angle).sin_cos();
            Self {
                a: s / angle,
                b: 2.0 * hs * hs / angle_sq,
                c: (angle - s) / (angle_sq * angle),
                d: 1.0 / angle_sq - hc / (2.0 * angle * hs),
            }
        }
    }
}

/// SO(3) left Jacobian `Jl(theta)`.
#[inline]
pub fn so3_left_jacobian(theta: &Vec3) -> Mat3 {
    let k = So3Coeffs::new(theta.norm_squared());
    let w = skew(theta);
    Mat3::identity() + w * k.b + w * w * k.c
}

/// SO(3) right Jacobian `Jr(theta) = Jl(-theta)`.
#[inline]
pub fn so3_right_jacobian(theta: &Vec3) -> Mat3 {
    let k = So3Coeffs::new(theta.norm_squared());
    let w = skew(theta);
    Mat3::identity() - w * k.b + w * w * k.c
}

#[inline]
pub fn so3_left_jacobian_inv(theta: &Vec3) -> Mat3 {
    let k = So3Coeffs::new(theta.norm_squared());
    let w = skew(theta);
    Mat3::identity() - w * 0.5 + w * w * k.d
}

#[inline]
pub fn so3_right_jacobian_inv(theta: &Vec3) -> Mat3 {
    let k = So3Coeffs::new(theta.norm_squared());
    let w = skew(theta);
    Mat3::identity() + w * 0.5 + w * w * k.d
}

/// Off-diagonal block `Q(rho, theta)` of the SE(3) left Jacobian.
fn se3_q_block(rho: &Vec3, theta: &Vec3) -> Mat3 {
    let t2 = theta.norm_squared();
    let angle = t2.sqrt();
    let (c1, c2, c3) = if angle < SERIES_ANGLE {
        let t4 = t2 * t2;
        (
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t4 * t2 / 362880.0,
            1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0 - t4 * t2 / 3628800.0,
            1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0 - t4 * t2 / 9979200.0,
        )
    } else {
        let (s, c) = angle.sin_cos();
        let t4 = t2 * t2;
        (
            (angle - s) / (t2 * angle),
            (t2 + 2.0 * c - 2.0) / (2.0 * t4),
            (2.0 * angle - 3.0 * s + angle * c) / (2.0 * t4 * angle),
        )
    };
    let w = skew(theta);
    let v = skew(rho);
    let wv = w * v;
    let vw = v * w;
    let wvw = wv * w;
    v * 0.5 + (wv + vw + wvw) * c1 + (w * wv + vw * w - wvw * 3.0) * c2 + (wvw * w + w * wvw) * c3
}

fn se3_block(j: &Mat3, q: &Mat3) -> Mat6 {
    let mut out = Mat6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(j);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(q);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(j);
    out
}

/// Inverse of a block upper-triangular `[[J, Q], [0, J]]` given `J^-1`.
fn se3_block_inv(j_inv: &Mat3, q: &Mat3) -> Mat6 {
    se3_block(j_inv, &(-j_inv * q * j_inv))
}

/// SE(3) left Jacobian.
pub fn left_jacobian(tau: &Twist) -> Mat6 {
    se3_block(&so3_left_jacobian(&tau.theta()), &se3_q_block(&tau.rho(), &tau.theta()))
}

/// SE(3) right Jacobian: `Exp(tau + d) ≈ Exp(tau) Exp(Jr(tau) d)`.
pub fn right_jacobian(tau: &Twist) -> Mat6 {
    let m = -*tau;
    se3_block(&so3_left_jacobian(&m.theta()), &se3_q_block(&m.rho(), &m.theta()))
}

pub fn left_jacobian_inv(tau: &Twist) -> Mat6 {
    se3_block_inv(&so3_left_jacobian_inv(&tau.theta()), &se3_q_block(&tau.rho(), &tau.theta()))
}

pub fn right_jacobian_inv(tau: &Twist) -> Mat6 {
    let m = -*tau;
    se3_block_inv(&so3_left_jacobian_inv(&m.theta()), &se3_q_block(&m.rho(), &m.theta()))
}

/// The four SE(3) Jacobians of one tangent vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobians {
    pub right: Mat6,
    pub left: Mat6,
    pub right_inv: Mat6,
    pub left_inv: Mat6,
}

/// All four Jacobians at `tau`. Rejects rotation angles at or beyond pi.
pub fn jacobians(tau: &Twist) -> Result<Jacobians, LieError> {
    let angle = tau.theta().norm();
    if angle >= PI - PI_MARGIN {
        return Err(LieError::AngleAtPi { angle });
    }
    let theta = tau.theta();
    let q_left = se3_q_block(&tau.rho(), &theta);
    let q_right = se3_q_block(&(-tau.rho()), &(-theta));
    let jl = so3_left_jacobian(&theta);
    let jr = so3_right_jacobian(&theta);
    let jl_inv = so3_left_jacobian_inv(&theta);
    let jr_inv = so3_right_jacobian_inv(&theta);
    Ok(Jacobians {
        right: se3_block(&jr, &q_right),
        left: se3_block(&jl, &q_left),
        right_inv: se3_block_inv(&jr_inv, &q_right),
        left_inv: se3_block_inv(&jl_inv, &q_left),
    })
}

/// Element of SO(3) stored as a 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    /// Nearest rotation to an arbitrary 3x3 matrix.
    pub fn from_matrix(m: &Mat3) -> Self {
        Self(*m).renormalized()
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        Self::exp(&(axis.normalize() * angle))
    }

    /// Rotation about z by `angle` radians.
    pub fn rz(angle: f64) -> Self {
        Self::exp(&Vec3::new(0.0, 0.0, angle))
    }

    /// From a quaternion given as (x, y, z, w); normalized first.
    pub fn from_quaternion(x: f64, y: f64, z: f64, w: f64) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        Self(*q.to_rotation_matrix().matrix())
    }

    /// Unit quaternion as (x, y, z, w) with non-negative w.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.0));
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    /// Rodrigues' formula.
    #[inline]
    pub fn exp(theta: &Vec3) -> Self {
        let k = So3Coeffs::new(theta.norm_squared());
        let w = skew(theta);
        Self(Mat3::identity() + w * k.a + w * w * k.b)
    }

    /// Principal logarithm; fails at angle pi.
    pub fn log(&self) -> Result<Vec3, LieError> {
        let r = &self.0;
        let cos = 0.5 * (r.trace() - 1.0);
        let axis_sin = 0.5 * vee(&(r - r.transpose()));
        let sin = axis_sin.norm();
        let angle = sin.atan2(cos);
        if angle >= PI - PI_MARGIN {
            return Err(LieError::AngleAtPi { angle });
        }
        if angle < SERIES_ANGLE {
            // sin/angle series; axis_sin = a * theta.
            let t2 = angle * angle;
            let a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
            return Ok(axis_sin / a);
        }
        if angle < 3.0 {
            return Ok(axis_sin * (angle / sin));
        }
        // Close to pi the antisymmetric part is small; recover the axis
        // from the symmetric part, the sign from the antisymmetric one.
        let sym = (r + r.transpose()) * 0.5 - Mat3::identity() * cos;
        let (mut best, mut idx) = (sym[(0, 0)], 0);
        for i in 1..3 {
            if sym[(i, i)] > best {
                best = sym[(i, i)];
                idx = i;
            }
        }
        let mut axis: Vec3 = sym.column(idx).into();
        axis.normalize_mut();
        if axis.dot(&axis_sin) < 0.0 {
            axis = -axis;
        }
        Ok(axis * angle)
    }

    /// Rotation angle in [0, pi].
    pub fn angle(&self) -> f64 {
        let cos = 0.5 * (self.0.trace() - 1.0);
        let sin = 0.5 * vee(&(self.0 - self.0.transpose())).norm();
        sin.atan2(cos)
    }

    #[inline]
    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    #[inline]
    pub fn rotate(&self, p: &Vec3) -> Vec3 {
        self.0 * p
    }

    /// Projection onto SO(3) (polar decomposition via SVD).
    pub fn renormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut m = u * v_t;
        if m.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            m = u * v_t;
        }
        Self(m)
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    #[inline]
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Tangent vector of SE(3), translation part first.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist(Vec6);

impl Twist {
    #[inline]
    pub fn new(rho: Vec3, theta: Vec3) -> Self {
        Self(Vec6::new(rho.x, rho.y, rho.z, theta.x, theta.y, theta.z))
    }

    #[inline]
    pub fn zero() -> Self {
        Self(Vec6::zeros())
    }

    #[inline]
    pub fn from_vector(v: Vec6) -> Self {
        Self(v)
    }

    #[inline]
    pub fn from_slice(v: &[f64]) -> Self {
        Self(Vec6::from_column_slice(v))
    }

    #[inline]
    pub fn as_vector(&self) -> &Vec6 {
        &self.0
    }

    #[inline]
    pub fn rho(&self) -> Vec3 {
        self.0.fixed_rows::<3>(0).into()
    }

    #[inline]
    pub fn theta(&self) -> Vec3 {
        self.0.fixed_rows::<3>(3).into()
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Add for Twist {
    type Output = Twist;
    fn add(self, rhs: Twist) -> Twist {
        Twist(self.0 + rhs.0)
    }
}

impl AddAssign for Twist {
    fn add_assign(&mut self, rhs: Twist) {
        self.0 += rhs.0;
    }
}

impl Sub for Twist {
    type Output = Twist;
    fn sub(self, rhs: Twist) -> Twist {
        Twist(self.0 - rhs.0)
    }
}

impl Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist(-self.0)
    }
}

impl Mul<f64> for Twist {
    type Output = Twist;
    fn mul(self, s: f64) -> Twist {
        Twist(self.0 * s)
    }
}

impl Mul<Twist> for f64 {
    type Output = Twist;
    fn mul(self, t: Twist) -> Twist {
        Twist(t.0 * self)
    }
}

/// Rigid transform on SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.translation;
        let [qx, qy, qz, qw] = self.rotation.to_quaternion();
        write!(
            f,
            "Pose(t: [{:.4}, {:.4}, {:.4}], q: [{:.4}, {:.4}, {:.4}, {:.4}])",
            t.x, t.y, t.z, qx, qy, qz, qw
        )
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Rotation::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Rotation::identity(), translation: t }
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self { rotation: r, translation: Vec3::zeros() }
    }

    /// From `tx ty tz qx qy qz qw`.
    pub fn from_tum(v: [f64; 7]) -> Self {
        Self {
            rotation: Rotation::from_quaternion(v[3], v[4], v[5], v[6]),
            translation: Vec3::new(v[0], v[1], v[2]),
        }
    }

    pub fn to_tum(&self) -> [f64; 7] {
        let [qx, qy, qz, qw] = self.rotation.to_quaternion();
        let t = self.translation;
        [t.x, t.y, t.z, qx, qy, qz, qw]
    }

    /// SE(3) exponential: rotation by Rodrigues, translation `Jl(theta) rho`.
    #[inline]
    pub fn exp(tau: &Twist) -> Self {
        let theta = tau.theta();
        let k = So3Coeffs::new(theta.norm_squared());
        let w = skew(&theta);
        let ww = w * w;
        let rotation = Rotation(Mat3::identity() + w * k.a + ww * k.b);
        let v = Mat3::identity() + w * k.b + ww * k.c;
        Self { rotation, translation: v * tau.rho() }
    }

    /// SE(3) logarithm on the principal branch.
    pub fn log(&self) -> Result<Twist, LieError> {
        let theta = self.rotation.log()?;
        let rho = so3_left_jacobian_inv(&theta) * self.translation;
        Ok(Twist::new(rho, theta))
    }

    #[inline]
    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        Self { rotation: r, translation: -(r.0 * self.translation) }
    }

    #[inline]
    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose {
            rotation: Rotation(self.rotation.0 * rhs.rotation.0),
            translation: self.rotation.0 * rhs.translation + self.translation,
        }
    }

    /// `R p + t`.
    #[inline]
    pub fn act(&self, p: &Vec3) -> Vec3 {
        self.rotation.0 * p + self.translation
    }

    /// `self * Exp(tau)`.
    #[inline]
    pub fn oplus(&self, tau: &Twist) -> Pose {
        self.compose(&Pose::exp(tau))
    }

    /// `Log(other^-1 * self)`.
    #[inline]
    pub fn ominus(&self, other: &Pose) -> Result<Twist, LieError> {
        other.inverse().compose(self).log()
    }

    /// Rotation projected back onto SO(3).
    pub fn renormalized(&self) -> Pose {
        Pose { rotation: self.rotation.renormalized(), translation: self.translation }
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().chain(self.rotation.0.iter()).all(|x| x.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;

    #[inline]
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    #[inline]
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut impl Rng) -> Vec3 {
        loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 0.1 && n < 1.0 {
                return v / n;
            }
        }
    }

    fn random_twist(rng: &mut impl Rng, max_angle: f64) -> Twist {
        let rho = random_unit(rng) * rng.random_range(0.0..5.0);
        let theta = random_unit(rng) * rng.random_range(0.0..max_angle);
        Twist::new(rho, theta)
    }

    fn pose_dist(a: &Pose, b: &Pose) -> f64 {
        (a.rotation.matrix() - b.rotation.matrix()).abs().max().max((a.translation - b.translation).abs().max())
    }

    #[test]
    fn exp_pure_translation() {
        let p = Pose::exp(&Twist::new(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros()));
        assert_eq!(p.rotation.matrix(), &Mat3::identity());
        assert_eq!(p.translation, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let p = Pose::exp(&Twist::new(Vec3::zeros(), Vec3::new(0.0, 0.0, PI / 2.0)));
        let x = p.rotation.rotate(&Vec3::x());
        assert!((x - Vec3::y()).norm() < 1e-15);
        assert!(p.translation.norm() < 1e-15);
    }

    #[test]
    fn log_of_simple_poses() {
        assert_eq!(Pose::identity().log().unwrap(), Twist::zero());
        let tau = Pose::from_translation(Vec3::new(0.0, 0.0, 5.0)).log().unwrap();
        assert_eq!(tau, Twist::new(Vec3::new(0.0, 0.0, 5.0), Vec3::zeros()));
    }

    #[test]
    fn log_rejects_half_turn() {
        let r = Rotation::from_matrix_unchecked(Mat3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0));
        assert!(matches!(r.log(), Err(LieError::AngleAtPi { .. })));
        let tau = Twist::new(Vec3::zeros(), Vec3::new(PI, 0.0, 0.0));
        assert!(jacobians(&tau).is_err());
    }

    #[test]
    fn exp_log_round_trip_near_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let rho = random_unit(&mut rng) * 3.0;
            let theta = random_unit(&mut rng) * rng.random_range(3.0..PI - 1e-3);
            let tau = Twist::new(rho, theta);
            let back = Pose::exp(&tau).log().unwrap();
            assert!((back - tau).norm() < 1e-9, "{:?} vs {:?}", back, tau);
        }
    }

    #[test]
    fn exp_log_round_trip_tiny_angles() {
        for e in [0.0, 1e-12, 1e-9, 1e-7, 1e-5, 9.99e-3, 1.001e-2] {
            let tau = Twist::new(Vec3::new(0.3, -1.0, 2.0), Vec3::new(e, -0.5 * e, 0.25 * e));
            let back = Pose::exp(&tau).log().unwrap();
            assert!((back - tau).norm() < 1e-14, "angle {e}");
        }
    }

    #[test]
    fn pose_log_exp_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let t = Pose::exp(&random_twist(&mut rng, PI - 1e-3));
            let back = Pose::exp(&t.log().unwrap());
            assert!(pose_dist(&t, &back) < 1e-10);
        }
    }

    #[test]
    fn oplus_ominus_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let t = Pose::exp(&random_twist(&mut rng, 3.0));
            let tau = random_twist(&mut rng, 3.0);
            assert_eq!(t.oplus(&Twist::zero()), t);
            assert!(t.ominus(&t).unwrap().norm() < 1e-12);
            let back = t.oplus(&tau).ominus(&t).unwrap();
            assert!((back - tau).norm() < 1e-10);
        }
    }

    #[test]
    fn act_and_compose() {
        let p = Vec3::new(0.5, -2.0, 1.0);
        assert_eq!(Pose::identity().act(&p), p);
        assert_eq!(Pose::from_translation(Vec3::x()).act(&Vec3::zeros()), Vec3::x());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = Pose::exp(&random_twist(&mut rng, 3.0));
            let b = Pose::exp(&random_twist(&mut rng, 3.0));
            let lhs = b.act(&a.act(&p));
            let rhs = (b * a).act(&p);
            assert!((lhs - rhs).norm() < 1e-12);
            assert!(pose_dist(&(a * a.inverse()), &Pose::identity()) < 1e-12);
        }
    }

    #[test]
    fn jacobians_at_zero_are_identity() {
        let j = jacobians(&Twist::zero()).unwrap();
        for m in [j.right, j.left, j.right_inv, j.left_inv] {
            assert_eq!(m, Mat6::identity());
        }
    }

    #[test]
    fn jacobian_mirror_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let tau = random_twist(&mut rng, PI - 1e-2);
            let j = jacobians(&tau).unwrap();
            assert!((j.left - right_jacobian(&-tau)).abs().max() < 1e-10);
            assert!((j.right_inv * j.right - Mat6::identity()).abs().max() < 1e-9);
            assert!((j.left_inv * j.left - Mat6::identity()).abs().max() < 1e-9);
            assert!((j.right - right_jacobian(&tau)).abs().max() < 1e-15);
            assert!((j.left_inv - left_jacobian_inv(&tau)).abs().max() < 1e-15);
            assert!((j.right_inv - right_jacobian_inv(&tau)).abs().max() < 1e-15);
        }
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-6;
        for _ in 0..200 {
            let tau = random_twist(&mut rng, 2.5);
            let base = Pose::exp(&tau);
            let jr = right_jacobian(&tau);
            for i in 0..6 {
                let mut d = Vec6::zeros();
                d[i] = h;
                let plus = Pose::exp(&(tau + Twist::from_vector(d))).ominus(&base).unwrap();
                let minus = Pose::exp(&(tau - Twist::from_vector(d))).ominus(&base).unwrap();
                let col = (plus - minus).as_vector() / (2.0 * h);
                assert!((col - jr.column(i)).norm() < 1e-5 * jr.column(i).norm().max(1.0));
            }
        }
    }

    #[test]
    fn right_jacobian_expansion_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..100 {
            let tau = random_twist(&mut rng, 2.5);
            let dir = Twist::from_vector(Vec6::from_fn(|_, _| rng.random_range(-1.0..1.0))).as_vector().normalize();
            let err = |s: f64| {
                let d = Twist::from_vector(dir * s);
                let lhs = Pose::exp(&(tau + d));
                let rhs = Pose::exp(&tau).oplus(&Twist::from_vector(right_jacobian(&tau) * d.as_vector()));
                lhs.ominus(&rhs).unwrap().norm()
            };
            let (e3, e4) = (err(1e-3), err(1e-4));
            // Quadratic decay: a 10x smaller step shrinks the error ~100x.
            assert!(e4 < e3 / 50.0 + 1e-13, "{e3} {e4}");
        }
    }

    #[test]
    fn chained_compositions_stay_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut t = Pose::identity();
        for i in 0..10_000 {
            t = t.oplus(&random_twist(&mut rng, 0.5));
            if i % 100 == 0 {
                t = t.renormalized();
            }
        }
        let r = t.rotation.matrix();
        assert!((r * r.transpose() - Mat3::identity()).abs().max() < 1e-9);
        assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quaternion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..100 {
            let t = Pose::exp(&random_twist(&mut rng, 3.0));
            let back = Pose::from_tum(t.to_tum());
            assert!(pose_dist(&t, &back) < 1e-12);
        }
    }
}
