//! Raycasting LiDAR simulator over analytic ground-truth trajectories.
//!
//! Scenes are made of bounded planes, so every noise-free return lies
//! exactly on a known surface when transformed by the true pose at its
//! timestamp.

pub mod pattern;
pub mod presets;
pub mod scene;
pub mod truth;

use ctlo_core::factors::Measurement;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use pattern::{Emission, ScanPattern, Shutter};
pub use presets::{preset, Preset, PRESET_NAMES};
pub use scene::{Hit, Plane, Scene};
pub use truth::{GroundTruth, Sinusoid};

/// During `[start, end)` only the listed planes return.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    pub start: f64,
    pub end: f64,
    pub visible: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub duration: f64,
    /// Standard deviation of the additive range noise, meters.
    pub noise: f64,
    pub seed: u64,
    pub max_range: f64,
    pub dropouts: Vec<Dropout>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { duration: 1.0, noise: 0.01, seed: 0, max_range: 100.0, dropouts: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Simulation {
    /// Sensor-frame returns ordered by time, then sensor.
    pub measurements: Vec<Measurement>,
    /// Scene plane hit by each return.
    pub planes: Vec<usize>,
}

/// Casts every emission of every pattern over `[0, duration)`.
///
/// Each sensor draws its noise from its own stream seeded by
/// `(seed, sensor)`, so adding a sensor leaves the others unchanged.
pub fn simulate(scene: &Scene, truth: &GroundTruth, patterns: &[ScanPattern], cfg: &SimConfig) -> Simulation {
    let mut tagged: Vec<(Measurement, usize)> = Vec::new();
    for pattern in patterns {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(pattern.sensor as u64));
        let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("finite noise");
        let mut i = 0;
        loop {
            let t = pattern.stamp(0.0, i);
            if t >= cfg.duration {
                break;
            }
            let sensor_pose = truth.pose(t).compose(&pattern.extrinsic);
            let dir = pattern.direction(i);
            i += 1;
            let world_dir = sensor_pose.rotation.rotate(&dir);
            let dropout = cfg.dropouts.iter().find(|d| t >= d.start && t < d.end);
            let visible = |p: usize| dropout.is_none_or(|d| d.visible.contains(&p));
            let Some(hit) = scene.raycast_filtered(&sensor_pose.translation, &world_dir, visible) else { continue };
            let range = if cfg.noise > 0.0 { hit.distance + noise.sample(&mut rng) } else { hit.distance };
            if range <= 0.0 || range > cfg.max_range {
                continue;
            }
            tagged.push((Measurement::new(dir * range, t, pattern.sensor), hit.plane));
        }
    }
    tagged.sort_by(|a, b| a.0.t.total_cmp(&b.0.t).then(a.0.sensor.cmp(&b.0.sensor)));
    let (measurements, planes) = tagged.into_iter().unzip();
    Simulation { measurements, planes }
}
