//! Emission patterns: per-point directions and time offsets.

use ctlo_core::liegroup::{Pose, Vec3};

/// `(sqrt(5) - 1) / 2`; successive multiples spread evenly over `[0, 1)`.
const GOLDEN_FRACTION: f64 = 0.618_033_988_749_894_8;

/// `sqrt(2) - 1`, paired with the golden fraction for a 2D low-discrepancy offset.
const SILVER_FRACTION: f64 = 0.414_213_562_373_095_1;

#[derive(Debug, Clone, PartialEq)]
pub enum Emission {
    /// A rotating head with `channels` beams evenly spaced in elevation
    /// over `[min_elevation, max_elevation]` (radians), turning at
    /// `revolutions` per second. Consecutive returns cycle through the
    /// channels, so one column is fired over `channels` emission slots.
    /// With `interleave`, revolution `n` is offset by fractions of the
    /// column and channel pitch drawn from a 2D low-discrepancy sequence,
    /// so successive revolutions fill the gaps between earlier returns;
    /// otherwise every revolution repeats the same directions.
    Spinning { channels: usize, min_elevation: f64, max_elevation: f64, revolutions: f64, interleave: bool },
    /// A programmable direction table replayed cyclically (sensor-frame
    /// unit vectors).
    Table(Vec<Vec3>),
}

/// How returns are stamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shutter {
    /// Every return is measured at its own emission time.
    Rolling,
    /// Returns are grouped into scans at `rate` Hz; a scan is measured at
    /// its start time and every return in it carries that stamp.
    Global { rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPattern {
    pub emission: Emission,
    pub points_per_second: f64,
    pub sensor: usize,
    /// Sensor frame in the body frame.
    pub extrinsic: Pose,
    pub shutter: Shutter,
}

impl ScanPattern {
    /// Spinning sensor with a symmetric vertical field of view of `fov` radians.
    pub fn spinning(channels: usize, fov: f64, revolutions: f64, points_per_second: f64) -> Self {
        Self {
            emission: Emission::Spinning { channels, min_elevation: -fov / 2.0, max_elevation: fov / 2.0, revolutions, interleave: true },
            points_per_second,
            sensor: 0,
            extrinsic: Pose::identity(),
            shutter: Shutter::Rolling,
        }
    }

    pub fn with_sensor(mut self, sensor: usize, extrinsic: Pose) -> Self {
        self.sensor = sensor;
        self.extrinsic = extrinsic;
        self
    }

    pub fn with_shutter(mut self, shutter: Shutter) -> Self {
        self.shutter = shutter;
        self
    }

    /// Emission time offset of return `i`.
    pub fn emission_time(&self, i: usize) -> f64 {
        i as f64 / self.points_per_second
    }

    /// Sensor-frame unit direction of return `i`.
    pub fn direction(&self, i: usize) -> Vec3 {
        match &self.emission {
            Emission::Spinning { channels, min_elevation, max_elevation, revolutions, interleave } => {
                let c = i % channels;
                let mut elevation = if *channels > 1 { min_elevation + (max_elevation - min_elevation) * c as f64 / (*channels - 1) as f64 } else { (min_elevation + max_elevation) / 2.0 };
                let turns = revolutions * self.emission_time(i);
                let mut azimuth = std::f64::consts::TAU * turns;
                if *interleave {
                    let pitch = std::f64::consts::TAU * revolutions * *channels as f64 / self.points_per_second;
                    azimuth += pitch * (turns.floor() * GOLDEN_FRACTION).fract();
                    if *channels > 1 {
                        let el_pitch = (max_elevation - min_elevation) / (*channels - 1) as f64;
                        elevation += el_pitch * ((turns.floor() * SILVER_FRACTION + 0.5).fract() - 0.5);
                    }
                }
                Vec3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin())
            }
            Emission::Table(dirs) => dirs[i % dirs.len()],
        }
    }

    /// Measurement time of return `i` given the stream start `t0`.
    pub fn stamp(&self, t0: f64, i: usize) -> f64 {
        let t = t0 + self.emission_time(i);
        match self.shutter {
            Shutter::Rolling => t,
            Shutter::Global { rate } => {
                let per_scan = (self.points_per_second / rate).round().max(1.0) as usize;
                t0 + (i / per_scan) as f64 / rate
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rolling_stamps_increase_and_directions_are_unit() {
        let p = ScanPattern::spinning(16, 0.5, 10.0, 20_000.0);
        let mut last = f64::NEG_INFINITY;
        for i in 0..4000 {
            let t = p.stamp(1.0, i);
            assert!(t > last);
            last = t;
            assert!((p.direction(i).norm() - 1.0).abs() < 1e-12);
        }
        // One revolution per 0.1 s: without interleaving, return 2000 points
        // the same way as return 0; with it, column and channel are shifted.
        let mut fixed = p.clone();
        if let Emission::Spinning { interleave, .. } = &mut fixed.emission {
            *interleave = false;
        }
        assert!((fixed.direction(2000) - fixed.direction(0)).norm() < 1e-9);
        let (a, b) = (p.direction(2000), p.direction(0));
        let shift = a.xy().normalize().dot(&b.xy().normalize()).acos();
        assert!((shift - GOLDEN_FRACTION * std::f64::consts::TAU / 125.0).abs() < 1e-9);
        let el_pitch = 0.5 / 15.0;
        assert!((a.z.asin() - b.z.asin() - SILVER_FRACTION * el_pitch).abs() < 1e-9);
        // Revolution 0 is unshifted.
        assert!((p.direction(15).z.asin() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn global_shutter_groups_scans() {
        let p = ScanPattern::spinning(4, 0.2, 10.0, 1000.0).with_shutter(Shutter::Global { rate: 10.0 });
        assert_eq!(p.stamp(0.0, 0), 0.0);
        assert_eq!(p.stamp(0.0, 99), 0.0);
        assert!((p.stamp(0.0, 100) - 0.1).abs() < 1e-15);
    }
}
