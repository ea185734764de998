//! Odometry configuration, presets and the flat `key = value` file format.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::liegroup::{Pose, Rotation, Vec3};
use crate::solver::{Smoothness, SolverConfig};
use crate::voxelmap::VoxelMapConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Every point is registered at its own timestamp.
    #[default]
    Continuous,
    /// Pre-deskewed scans; one control pose per scan timestamp.
    Deskewed,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "continuous" => Ok(Mode::Continuous),
            "deskewed" | "deskewed-discrete" => Ok(Mode::Deskewed),
            other => Err(format!("unknown mode `{other}` (expected continuous or deskewed)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Continuous => "continuous",
            Mode::Deskewed => "deskewed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid value for `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Value { key: key.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdometryConfig {
    /// Segments `K` in the window (deskewed mode: scan poses in the window).
    pub segments: usize,
    pub dt: f64,
    pub sigma_r: f64,
    /// `f64::INFINITY` disables the smoothness term.
    pub sigma_v: f64,
    pub voxel_size: f64,
    pub max_range: f64,
    pub init_duration: f64,
    pub huber: Option<f64>,
    pub mode: Mode,
    /// Uniform downsampling cap per segment.
    pub max_points_per_segment: Option<usize>,
    pub smoothness: Smoothness,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Sensor-to-body extrinsics, indexed by sensor id.
    pub extrinsics: Vec<Pose>,
    /// A window is also processed once any sensor is this far past its end,
    /// so a silent sensor cannot stall the pipeline.
    pub max_latency: f64,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self::indoor()
    }
}

impl OdometryConfig {
    pub fn indoor() -> Self {
        Self {
            segments: 4,
            dt: 0.03,
            sigma_r: 0.1,
            sigma_v: 0.05,
            voxel_size: 0.4,
            max_range: 100.0,
            init_duration: 0.3,
            huber: Some(0.3),
            mode: Mode::Continuous,
            max_points_per_segment: Some(4096),
            smoothness: Smoothness::Live,
            outer_iterations: 5,
            inner_iterations: 10,
            extrinsics: vec![Pose::identity()],
            max_latency: 0.1,
        }
    }

    pub fn outdoor() -> Self {
        Self { voxel_size: 0.8, ..Self::indoor() }
    }

    /// Short segments and a fine map for fast rotation.
    pub fn aggressive() -> Self {
        Self { dt: 0.01, voxel_size: 0.2, ..Self::indoor() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "indoor" => Some(Self::indoor()),
            "outdoor" => Some(Self::outdoor()),
            "aggressive" => Some(Self::aggressive()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| if v > 0.0 && !v.is_nan() { Ok(()) } else { Err(invalid(key, format!("must be positive, got {v}"))) };
        if self.segments < 1 {
            return Err(invalid("segments", "must be at least 1"));
        }
        if self.mode == Mode::Deskewed && self.segments < 2 {
            return Err(invalid("segments", "deskewed mode needs at least 2 scan poses"));
        }
        positive("dt", self.dt)?;
        positive("sigma_r", self.sigma_r)?;
        positive("sigma_v", self.sigma_v)?;
        positive("voxel_size", self.voxel_size)?;
        positive("max_range", self.max_range)?;
        positive("max_latency", self.max_latency)?;
        if !self.dt.is_finite() || !self.sigma_r.is_finite() || !self.voxel_size.is_finite() {
            return Err(invalid("dt", "dt, sigma_r and voxel_size must be finite"));
        }
        if !(self.init_duration >= 0.0 && self.init_duration.is_finite()) {
            return Err(invalid("init_duration", "must be finite and non-negative"));
        }
        if let Some(h) = self.huber {
            positive("huber", h)?;
        }
        if self.max_points_per_segment == Some(0) {
            return Err(invalid("max_points_per_segment", "must be positive"));
        }
        if self.outer_iterations == 0 || self.inner_iterations == 0 {
            return Err(invalid("outer_iterations", "iteration caps must be positive"));
        }
        if self.extrinsics.is_empty() {
            return Err(invalid("extrinsic", "at least one sensor is required"));
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            sigma_r: self.sigma_r,
            sigma_v: self.sigma_v,
            huber: self.huber,
            max_correspondence_distance: 2.0 * self.voxel_size,
            max_plane_residual: self.voxel_size / 4.0,
            outer_iterations: self.outer_iterations,
            inner_iterations: self.inner_iterations,
            smoothness: self.smoothness,
            ..SolverConfig::default()
        }
    }

    pub fn map_config(&self) -> VoxelMapConfig {
        VoxelMapConfig { max_range: self.max_range, ..VoxelMapConfig::with_voxel_size(self.voxel_size) }
    }

    /// Parses `key = value` lines with `#` comments. A `preset` key, if
    /// present, must come first and selects the base values.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::indoor();
        let mut extrinsics: Vec<(usize, Pose)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, message: format!("expected `key = value`, got `{line}`") });
            };
            let (key, value) = (key.trim(), value.trim());
            if let Some(index) = key.strip_prefix("extrinsic.") {
                let index: usize = index.parse().map_err(|_| invalid(key, "sensor index must be an integer"))?;
                extrinsics.push((index, parse_extrinsic(key, value)?));
                continue;
            }
            cfg.set(key, value)?;
        }
        if !extrinsics.is_empty() {
            extrinsics.sort_by_key(|e| e.0);
            for (expected, (index, _)) in extrinsics.iter().enumerate() {
                if *index != expected {
                    return Err(invalid("extrinsic", format!("sensor indices must be contiguous from 0, missing {expected}")));
                }
            }
            cfg.extrinsics = extrinsics.into_iter().map(|e| e.1).collect();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let float = |v: &str| -> Result<f64, ConfigError> {
            match v {
                "inf" | "infinity" => Ok(f64::INFINITY),
                _ => v.parse::<f64>().map_err(|e| invalid(key, e.to_string())),
            }
        };
        let int = |v: &str| v.parse::<usize>().map_err(|e| invalid(key, e.to_string()));
        match key {
            "preset" => {
                let extrinsics = std::mem::take(&mut self.extrinsics);
                *self = Self::preset(value).ok_or_else(|| invalid(key, format!("unknown preset `{value}`")))?;
                self.extrinsics = extrinsics;
            }
            "segments" => self.segments = int(value)?,
            "dt" => self.dt = float(value)?,
            "sigma_r" => self.sigma_r = float(value)?,
            "sigma_v" => self.sigma_v = float(value)?,
            "voxel_size" => self.voxel_size = float(value)?,
            "max_range" => self.max_range = float(value)?,
            "init_duration" => self.init_duration = float(value)?,
            "huber" => self.huber = if value == "off" { None } else { Some(float(value)?) },
            "mode" => self.mode = value.parse().map_err(|e: String| invalid(key, e))?,
            "max_points_per_segment" => self.max_points_per_segment = if value == "off" { None } else { Some(int(value)?) },
            "smoothness" => {
                self.smoothness = match value {
                    "live" => Smoothness::Live,
                    "frozen" => Smoothness::Frozen,
                    _ => return Err(invalid(key, "expected live or frozen")),
                }
            }
            "outer_iterations" => self.outer_iterations = int(value)?,
            "inner_iterations" => self.inner_iterations = int(value)?,
            "max_latency" => self.max_latency = float(value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// The inverse of [`OdometryConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt_f = |v: Option<f64>| v.map_or("off".to_string(), |x| x.to_string());
        let _ = writeln!(s, "segments = {}", self.segments);
        let _ = writeln!(s, "dt = {}", self.dt);
        let _ = writeln!(s, "sigma_r = {}", self.sigma_r);
        let _ = writeln!(s, "sigma_v = {}", self.sigma_v);
        let _ = writeln!(s, "voxel_size = {}", self.voxel_size);
        let _ = writeln!(s, "max_range = {}", self.max_range);
        let _ = writeln!(s, "init_duration = {}", self.init_duration);
        let _ = writeln!(s, "huber = {}", opt_f(self.huber));
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "max_points_per_segment = {}", self.max_points_per_segment.map_or("off".to_string(), |n| n.to_string()));
        let _ = writeln!(s, "smoothness = {}", if self.smoothness == Smoothness::Live { "live" } else { "frozen" });
        let _ = writeln!(s, "outer_iterations = {}", self.outer_iterations);
        let _ = writeln!(s, "inner_iterations = {}", self.inner_iterations);
        let _ = writeln!(s, "max_latency = {}", self.max_latency);
        for (i, e) in self.extrinsics.iter().enumerate() {
            let v = e.to_tum();
            let _ = writeln!(s, "extrinsic.{i} = {} {} {} {} {} {} {}", v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
        }
        s
    }
}

fn parse_extrinsic(key: &str, value: &str) -> Result<Pose, ConfigError> {
    let nums: Vec<f64> = value.split_whitespace().map(|t| t.parse::<f64>().map_err(|e| invalid(key, e.to_string()))).collect::<Result<_, _>>()?;
    let [tx, ty, tz, qx, qy, qz, qw] = nums[..] else {
        return Err(invalid(key, format!("expected 7 numbers (tx ty tz qx qy qz qw), got {}", nums.len())));
    };
    let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
    if !(norm > 1e-9) || !nums.iter().all(|v| v.is_finite()) {
        return Err(invalid(key, "quaternion must be finite and non-zero"));
    }
    Ok(Pose::new(Rotation::from_quaternion(qx, qy, qz, qw), Vec3::new(tx, ty, tz)))
}
