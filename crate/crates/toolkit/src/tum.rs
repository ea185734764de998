//! TUM trajectory files: one `t tx ty tz qx qy qz qw` line per pose,
//! `#` comments allowed.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use ctlo_core::liegroup::Pose;
use ctlo_core::pipeline::TimedPose;
use thiserror::Error;

/// Largest accepted deviation of `|q|` from one.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TumError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: quaternion norm {norm} is not 1")]
    NotNormalized { line: usize, norm: f64 },
}

/// One line as written, so reading and writing records is lossless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TumRecord {
    pub t: f64,
    pub translation: [f64; 3],
    /// `(x, y, z, w)`.
    pub quaternion: [f64; 4],
}

impl TumRecord {
    pub fn from_pose(t: f64, pose: &Pose) -> Self {
        let v = pose.to_tum();
        Self { t, translation: [v[0], v[1], v[2]], quaternion: [v[3], v[4], v[5], v[6]] }
    }

    pub fn pose(&self) -> Pose {
        let [x, y, z] = self.translation;
        let [qx, qy, qz, qw] = self.quaternion;
        Pose::from_tum([x, y, z, qx, qy, qz, qw])
    }

    pub fn timed_pose(&self) -> TimedPose {
        TimedPose { t: self.t, pose: self.pose() }
    }
}

pub fn parse_tum(text: &str) -> Result<Vec<TumRecord>, TumError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<f64> = body
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|e| TumError::Syntax { line, message: format!("`{f}`: {e}") }))
            .collect::<Result<_, _>>()?;
        if fields.len() != 8 {
            return Err(TumError::Syntax { line, message: format!("expected 8 fields, got {}", fields.len()) });
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(TumError::Syntax { line, message: "non-finite value".to_string() });
        }
        let quaternion = [fields[4], fields[5], fields[6], fields[7]];
        let norm = quaternion.iter().map(|q| q * q).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
            return Err(TumError::NotNormalized { line, norm });
        }
        out.push(TumRecord { t: fields[0], translation: [fields[1], fields[2], fields[3]], quaternion });
    }
    Ok(out)
}

/// Formats records with each float in its shortest exact representation.
pub fn format_tum(records: &[TumRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let [x, y, z] = r.translation;
        let [qx, qy, qz, qw] = r.quaternion;
        let _ = writeln!(s, "{:?} {x:?} {y:?} {z:?} {qx:?} {qy:?} {qz:?} {qw:?}", r.t);
    }
    s
}

pub fn read_tum(path: impl AsRef<Path>) -> Result<Vec<TumRecord>, TumError> {
    parse_tum(&fs::read_to_string(path)?)
}

pub fn write_tum(path: impl AsRef<Path>, records: &[TumRecord]) -> io::Result<()> {
    fs::write(path, format_tum(records))
}

/// Reads a TUM file as timed poses.
pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Vec<TimedPose>, TumError> {
    Ok(read_tum(path)?.iter().map(TumRecord::timed_pose).collect())
}

pub fn write_trajectory(path: impl AsRef<Path>, poses: &[TimedPose]) -> io::Result<()> {
    let records: Vec<_> = poses.iter().map(|p| TumRecord::from_pose(p.t, &p.pose)).collect();
    write_tum(path, &records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctlo_core::liegroup::{Rotation, Vec3};

    #[test]
    fn records_round_trip_exactly() {
        let records = vec![
            TumRecord { t: 1.0e9 + 0.123_456_789, translation: [0.1, -2.0 / 3.0, 1e-300], quaternion: [0.0, 0.0, 0.0, 1.0] },
            TumRecord { t: 2.5, translation: [1.0, 2.0, 3.0], quaternion: [0.5, -0.5, 0.5, 0.5] },
        ];
        let text = format_tum(&records);
        assert_eq!(parse_tum(&text).unwrap(), records);
        assert_eq!(format_tum(&parse_tum(&text).unwrap()), text);
    }

    #[test]
    fn poses_survive_a_round_trip() {
        let pose = Pose::new(Rotation::exp(&Vec3::new(0.3, -1.2, 2.0)), Vec3::new(4.0, -5.0, 0.25));
        let back = parse_tum(&format_tum(&[TumRecord::from_pose(0.0, &pose)])).unwrap()[0].pose();
        assert!(back.ominus(&pose).unwrap().norm() < 1e-12);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "# timestamp tx ty tz qx qy qz qw\n\n0 1 2 3 0 0 0 1 # origin\n";
        let r = parse_tum(text).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].translation, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(matches!(parse_tum("0 1 2 3 0 0 0\n"), Err(TumError::Syntax { line: 1, .. })));
        assert!(matches!(parse_tum("\n0 1 2 x 0 0 0 1\n"), Err(TumError::Syntax { line: 2, .. })));
        assert!(matches!(parse_tum("0 1 2 3 0 0 0 nan\n"), Err(TumError::Syntax { .. })));
        assert!(matches!(parse_tum("0 0 0 0 0 0 0 1.00001\n"), Err(TumError::NotNormalized { line: 1, .. })));
        assert!(parse_tum("0 0 0 0 0 0 0 1.0000005\n").is_ok());
    }
}
