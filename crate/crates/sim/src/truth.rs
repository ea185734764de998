//! Analytic ground-truth trajectories.
//!
//! A trajectory is `base * (R(u), p(u))` with `R(u) = Exp(a u) Exp(s(u))`
//! and `p(u) = v u + w(u)`, where `s` and `w` are sums of sinusoids and
//! `u(t)` is a time warp that holds still until `start`, accelerates
//! linearly over `ramp` seconds and then advances at unit rate. The warp
//! is C1, so pose and twist are continuous everywhere.

use ctlo_core::liegroup::{so3_right_jacobian, Pose, Rotation, Twist, Vec3};

/// `amplitude * sin(frequency * u + phase)` per axis (frequency in rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: Vec3,
    pub frequency: Vec3,
    pub phase: Vec3,
}

impl Sinusoid {
    pub fn new(amplitude: Vec3, frequency: Vec3, phase: Vec3) -> Self {
        Self { amplitude, frequency, phase }
    }

    fn value(&self, u: f64) -> Vec3 {
        Vec3::from_fn(|i, _| self.amplitude[i] * (self.frequency[i] * u + self.phase[i]).sin())
    }

    fn rate(&self, u: f64) -> Vec3 {
        Vec3::from_fn(|i, _| self.amplitude[i] * self.frequency[i] * (self.frequency[i] * u + self.phase[i]).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub base: Pose,
    /// Time at which motion begins.
    pub start: f64,
    /// Duration of the linear speed-up; zero starts at full rate.
    pub ramp: f64,
    /// Constant world-frame velocity `v`.
    pub velocity: Vec3,
    /// Constant angular rate `a`, applied before the oscillation.
    pub spin: Vec3,
    pub translation_wave: Vec<Sinusoid>,
    pub rotation_wave: Vec<Sinusoid>,
}

impl GroundTruth {
    pub fn stationary(base: Pose) -> Self {
        Self { base, start: 0.0, ramp: 0.0, velocity: Vec3::zeros(), spin: Vec3::zeros(), translation_wave: Vec::new(), rotation_wave: Vec::new() }
    }

    /// Warped time `u(t)` and its rate `du/dt`.
    pub fn warp(&self, t: f64) -> (f64, f64) {
        let s = t - self.start;
        if s <= 0.0 {
            (0.0, 0.0)
        } else if s < self.ramp {
            (s * s / (2.0 * self.ramp), s / self.ramp)
        } else {
            (s - self.ramp / 2.0, 1.0)
        }
    }

    fn wave_rotation(&self, u: f64) -> (Vec3, Vec3) {
        let s = self.rotation_wave.iter().fold(Vec3::zeros(), |acc, w| acc + w.value(u));
        let ds = self.rotation_wave.iter().fold(Vec3::zeros(), |acc, w| acc + w.rate(u));
        (s, ds)
    }

    /// Pose relative to `base` at warped time `u`.
    fn local(&self, u: f64) -> Pose {
        let (s, _) = self.wave_rotation(u);
        let rotation = Rotation::exp(&(self.spin * u)) * Rotation::exp(&s);
        let translation = self.velocity * u + self.translation_wave.iter().fold(Vec3::zeros(), |acc, w| acc + w.value(u));
        Pose::new(rotation, translation)
    }

    pub fn pose(&self, t: f64) -> Pose {
        self.base.compose(&self.local(self.warp(t).0))
    }

    /// Body-frame velocity `(v, omega)` with `T^-1 dT/dt = [omega]x, v`.
    pub fn twist(&self, t: f64) -> Twist {
        let (u, du) = self.warp(t);
        let (s, ds) = self.wave_rotation(u);
        let local = self.local(u);
        let omega = Rotation::exp(&s).inverse().rotate(&self.spin) + so3_right_jacobian(&s) * ds;
        let dp = self.velocity + self.translation_wave.iter().fold(Vec3::zeros(), |acc, w| acc + w.rate(u));
        let v = local.rotation.inverse().rotate(&dp);
        Twist::new(v * du, omega * du)
    }

    /// Poses at `rate` Hz over `[t0, t1]`.
    pub fn sample(&self, t0: f64, t1: f64, rate: f64) -> Vec<(f64, Pose)> {
        let n = ((t1 - t0) * rate).floor() as usize;
        (0..=n).map(|i| t0 + i as f64 / rate).map(|t| (t, self.pose(t))).collect()
    }

    /// Largest linear and angular speed over `[t0, t1]` on a 1 ms grid.
    pub fn peak_speeds(&self, t0: f64, t1: f64) -> (f64, f64) {
        let n = ((t1 - t0) * 1000.0).ceil() as usize;
        (0..=n).map(|i| self.twist(t0 + i as f64 * 1e-3)).fold((0.0, 0.0), |(v, w), tw| (v.max(tw.rho().norm()), w.max(tw.theta().norm())))
    }
}
