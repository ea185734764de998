//! Named scenarios pairing a scene, a trajectory, a sensor rig and a
//! matching odometry configuration.

use ctlo_core::factors::Measurement;
use ctlo_core::liegroup::{Pose, Rotation, Vec3};
use ctlo_core::pipeline::{Mode, OdometryConfig};

use crate::{simulate, Dropout, GroundTruth, ScanPattern, Scene, Shutter, SimConfig, Simulation, Sinusoid};

pub const PRESET_NAMES: &[&str] = &["stationary", "constant-velocity", "handheld", "spin", "corridor", "one-wall", "deskewed"];

/// Motion begins once the map initialization period is over.
const MOTION_START: f64 = 0.35;

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub scene: Scene,
    pub truth: GroundTruth,
    pub patterns: Vec<ScanPattern>,
    pub sim: SimConfig,
    pub odometry: OdometryConfig,
}

impl Preset {
    pub fn simulate(&self) -> Simulation {
        simulate(&self.scene, &self.truth, &self.patterns, &self.sim)
    }

    pub fn measurements(&self) -> Vec<Measurement> {
        self.simulate().measurements
    }

    /// True pose relative to the body frame at time zero, which is the
    /// odometry's world frame.
    pub fn relative_pose(&self, t: f64) -> Pose {
        self.truth.pose(0.0).inverse().compose(&self.truth.pose(t))
    }

    /// Relative ground truth at `rate` Hz over the simulated span.
    pub fn truth_samples(&self, rate: f64) -> Vec<(f64, Pose)> {
        let origin = self.truth.pose(0.0).inverse();
        self.truth.sample(0.0, self.sim.duration, rate).into_iter().map(|(t, p)| (t, origin.compose(&p))).collect()
    }

    /// The same scenario with only sensor 0 kept.
    pub fn single_sensor(&self) -> Preset {
        let mut p = self.clone();
        p.patterns.retain(|s| s.sensor == 0);
        p.odometry.extrinsics.truncate(1);
        p
    }
}

fn room() -> Scene {
    Scene::room(Vec3::new(-5.0, -5.0, 0.0), Vec3::new(5.0, 5.0, 3.0))
}

fn moving(base: Pose, ramp: f64) -> GroundTruth {
    GroundTruth { start: MOTION_START, ramp, ..GroundTruth::stationary(base) }
}

/// Builds a preset by name with the given noise seed.
pub fn preset(name: &str, seed: u64) -> Option<Preset> {
    let head = ScanPattern::spinning(16, 60f64.to_radians(), 10.0, 20_000.0);
    let sim = |duration: f64| SimConfig { duration, noise: 0.01, seed, ..SimConfig::default() };
    let origin = Pose::new(Rotation::rz(0.3), Vec3::new(0.5, -0.3, 1.4));
    let p = |scene, truth, patterns, sim, odometry| Some(Preset { name: name.to_string(), scene, truth, patterns, sim, odometry });
    match name {
        "stationary" => p(room(), GroundTruth::stationary(origin), vec![head], sim(2.0), OdometryConfig::indoor()),
        "constant-velocity" => {
            let truth = GroundTruth { velocity: Vec3::new(0.8, 0.3, 0.05), spin: Vec3::new(0.0, 0.0, 0.3), ..moving(Pose::new(Rotation::rz(0.3), Vec3::new(-2.0, -1.0, 1.4)), 0.3) };
            p(room(), truth, vec![head], sim(4.0), OdometryConfig::indoor())
        }
        "handheld" => {
            // Peak speeds stay below 2 m/s and 1 rad/s.
            let truth = GroundTruth {
                spin: Vec3::new(0.0, 0.0, 0.25),
                translation_wave: vec![Sinusoid::new(Vec3::new(3.0, 2.5, 0.2), Vec3::new(0.45, 0.5, 1.3), Vec3::zeros())],
                rotation_wave: vec![Sinusoid::new(Vec3::new(0.12, 0.12, 0.5), Vec3::new(1.3, 1.1, 0.9), Vec3::zeros())],
                ..moving(Pose::from_translation(Vec3::new(0.0, 0.0, 1.5)), 1.0)
            };
            p(room(), truth, vec![head], sim(30.0), OdometryConfig::indoor())
        }
        "spin" => {
            // Fast spin about z with a tilt wobble, so the angular velocity
            // changes within a segment.
            let head = ScanPattern::spinning(32, 60f64.to_radians(), 10.0, 100_000.0);
            let truth = GroundTruth {
                spin: Vec3::new(0.0, 0.0, 15.0),
                translation_wave: vec![Sinusoid::new(Vec3::new(0.5, 0.4, 0.1), Vec3::new(0.8, 1.0, 1.5), Vec3::zeros())],
                rotation_wave: vec![Sinusoid::new(Vec3::new(0.3, 0.3, 0.0), Vec3::new(10.0, 11.0, 0.0), Vec3::zeros())],
                ..moving(origin, 1.0)
            };
            p(room(), truth, vec![head], sim(4.0), OdometryConfig::aggressive())
        }
        "corridor" => {
            // The horizontal head only sees vertical surfaces, so height is
            // unobservable from it alone; the vertical head sees floor and
            // ceiling.
            let scene = Scene::corridor(40.0, 2.4, 3.0, 4.0, 0.3);
            let horizontal = ScanPattern::spinning(8, 3f64.to_radians(), 10.0, 20_000.0);
            let vertical_ext = Pose::new(Rotation::from_axis_angle(&Vec3::x(), std::f64::consts::FRAC_PI_2), Vec3::new(0.1, 0.0, 0.15));
            let vertical = ScanPattern::spinning(16, 30f64.to_radians(), 10.0, 20_000.0).with_sensor(1, vertical_ext);
            let truth = GroundTruth {
                velocity: Vec3::new(1.0, 0.0, 0.0),
                translation_wave: vec![Sinusoid::new(Vec3::new(0.0, 0.2, 0.15), Vec3::new(0.0, 0.7, 2.0), Vec3::zeros())],
                rotation_wave: vec![Sinusoid::new(Vec3::new(0.03, 0.03, 0.1), Vec3::new(1.7, 1.3, 0.6), Vec3::zeros())],
                ..moving(Pose::from_translation(Vec3::new(2.0, 0.0, 1.5)), 0.5)
            };
            let odometry = OdometryConfig { extrinsics: vec![Pose::identity(), vertical_ext], ..OdometryConfig::indoor() };
            p(scene, truth, vec![horizontal, vertical], sim(20.0), odometry)
        }
        "one-wall" => {
            // For 0.2 s only the +x wall returns.
            let truth = GroundTruth {
                velocity: Vec3::new(0.6, 0.3, 0.0),
                spin: Vec3::new(0.0, 0.0, 0.2),
                translation_wave: vec![Sinusoid::new(Vec3::new(0.2, 0.3, 0.1), Vec3::new(2.0, 1.5, 2.5), Vec3::zeros())],
                ..moving(origin, 0.3)
            };
            let sim = SimConfig { dropouts: vec![Dropout { start: 1.5, end: 1.7, visible: vec![1] }], ..sim(3.0) };
            p(room(), truth, vec![head], sim, OdometryConfig::indoor())
        }
        "deskewed" => {
            // Every scan is measured at a single instant, so each scan is
            // free of motion distortion.
            let head = head.with_shutter(Shutter::Global { rate: 10.0 });
            let truth = GroundTruth {
                velocity: Vec3::new(0.5, 0.2, 0.0),
                translation_wave: vec![Sinusoid::new(Vec3::new(0.2, 0.2, 0.05), Vec3::new(1.0, 1.5, 2.0), Vec3::zeros())],
                ..moving(origin, 1.0)
            };
            let odometry = OdometryConfig { mode: Mode::Deskewed, ..OdometryConfig::indoor() };
            p(room(), truth, vec![head], SimConfig { noise: 0.0, ..sim(3.0) }, odometry)
        }
        _ => None,
    }
}
