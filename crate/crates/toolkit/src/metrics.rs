//! Trajectory accuracy: absolute trajectory error after rigid alignment and
//! KITTI-style relative translational error.

use ctlo_core::liegroup::{Mat3, Pose, Rotation, Vec3};
use ctlo_core::pipeline::TimedPose;
use thiserror::Error;

/// Largest time difference accepted when pairing estimate and reference.
pub const ASSOCIATION_TOLERANCE: f64 = 0.01;

/// Default segment lengths for RTE, meters.
pub const RTE_LENGTHS: [f64; 8] = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0];

/// First frames of RTE segments are taken every this many pairs.
pub const RTE_STEP: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("only {pairs} matched pose pairs; at least 3 are required")]
    InsufficientOverlap { pairs: usize },
    #[error("reference path is {length} m long, shorter than the {required} m segment")]
    InsufficientLength { length: f64, required: f64 },
    #[error("alignment is degenerate")]
    Degenerate,
}

/// Pairs each estimate pose with the nearest-in-time reference pose within
/// `tolerance`. Returns `(est index, ref index)` in estimate order; each
/// reference pose is used at most once.
pub fn associate(est: &[TimedPose], reference: &[TimedPose], tolerance: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..reference.len()).collect();
    order.sort_by(|a, b| reference[*a].t.total_cmp(&reference[*b].t));
    let times: Vec<f64> = order.iter().map(|i| reference[*i].t).collect();
    let mut used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    let mut est_order: Vec<usize> = (0..est.len()).collect();
    est_order.sort_by(|a, b| est[*a].t.total_cmp(&est[*b].t));
    for i in est_order {
        let t = est[i].t;
        let k = times.partition_point(|x| *x < t);
        let best = [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|j| *j < times.len() && !used[*j])
            .min_by(|a, b| (times[*a] - t).abs().total_cmp(&(times[*b] - t).abs()));
        if let Some(j) = best.filter(|j| (times[*j] - t).abs() <= tolerance) {
            used[j] = true;
            pairs.push((i, order[j]));
        }
    }
    pairs
}

/// Rotation and translation minimizing `sum |dst_i - (R src_i + t)|^2`
/// (Umeyama without scale).
pub fn align_rigid(src: &[Vec3], dst: &[Vec3]) -> Result<Pose, MetricsError> {
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    if src.is_empty() {
        return Err(MetricsError::InsufficientOverlap { pairs: 0 });
    }
    let mu_s = src.iter().sum::<Vec3>() / n;
    let mu_d = dst.iter().sum::<Vec3>() / n;
    let cov = src.iter().zip(dst).fold(Mat3::zeros(), |acc, (s, d)| acc + (d - mu_d) * (s - mu_s).transpose()) / n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.ok_or(MetricsError::Degenerate)?, svd.v_t.ok_or(MetricsError::Degenerate)?);
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    if !r.iter().all(|x| x.is_finite()) {
        return Err(MetricsError::Degenerate);
    }
    let rotation = Rotation::from_matrix(&r);
    Ok(Pose::new(rotation, mu_d - rotation.rotate(&mu_s)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteReport {
    pub pairs: usize,
    pub rmse: f64,
    pub mean: f64,
    pub max: f64,
    /// RMSE per world axis.
    pub rmse_axis: Vec3,
    /// Maps the estimate into the reference frame.
    pub alignment: Pose,
    /// Matched `(t, aligned estimate, reference)` translations.
    pub matched: Vec<(f64, Vec3, Vec3)>,
}

/// Translational ATE of `est` against `reference` after rigid alignment.
pub fn compute_ate(est: &[TimedPose], reference: &[TimedPose]) -> Result<AteReport, MetricsError> {
    let pairs = associate(est, reference, ASSOCIATION_TOLERANCE);
    if pairs.len() < 3 {
        return Err(MetricsError::InsufficientOverlap { pairs: pairs.len() });
    }
    let src: Vec<Vec3> = pairs.iter().map(|(i, _)| est[*i].pose.translation).collect();
    let dst: Vec<Vec3> = pairs.iter().map(|(_, j)| reference[*j].pose.translation).collect();
    let alignment = align_rigid(&src, &dst)?;
    let matched: Vec<(f64, Vec3, Vec3)> = pairs.iter().zip(src.iter().zip(&dst)).map(|((i, _), (s, d))| (est[*i].t, alignment.act(s), *d)).collect();
    let n = matched.len() as f64;
    let errors: Vec<Vec3> = matched.iter().map(|(_, a, d)| a - d).collect();
    let norms: Vec<f64> = errors.iter().map(|e| e.norm()).collect();
    Ok(AteReport {
        pairs: matched.len(),
        rmse: (norms.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        mean: norms.iter().sum::<f64>() / n,
        max: norms.iter().copied().fold(0.0, f64::max),
        rmse_axis: errors.iter().fold(Vec3::zeros(), |acc, e| acc + e.component_mul(e)).map(|s| (s / n).sqrt()),
        alignment,
        matched,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RteReport {
    /// Mean translational drift over all segments, percent.
    pub percent: f64,
    pub segments: usize,
    /// `(length, mean drift percent, segment count)` for each length reached.
    pub per_length: Vec<(f64, f64, usize)>,
}

/// KITTI-style relative translational error: for first frames every
/// [`RTE_STEP`] matched poses and each segment length `L`, the end frame
/// is the first one at least `L` further along the reference path, and the
/// drift is the translation of `(ref_i^-1 ref_j)^-1 (est_i^-1 est_j)`
/// divided by `L`.
pub fn compute_rte(est: &[TimedPose], reference: &[TimedPose], lengths: &[f64]) -> Result<RteReport, MetricsError> {
    let pairs = associate(est, reference, ASSOCIATION_TOLERANCE);
    if pairs.len() < 3 {
        return Err(MetricsError::InsufficientOverlap { pairs: pairs.len() });
    }
    let e: Vec<Pose> = pairs.iter().map(|(i, _)| est[*i].pose).collect();
    let r: Vec<Pose> = pairs.iter().map(|(_, j)| reference[*j].pose).collect();
    let mut dist = vec![0.0];
    for w in r.windows(2) {
        dist.push(dist.last().unwrap() + (w[1].translation - w[0].translation).norm());
    }
    let total = *dist.last().unwrap();
    let shortest = lengths.iter().copied().fold(f64::INFINITY, f64::min);
    if !(total >= shortest) {
        return Err(MetricsError::InsufficientLength { length: total, required: shortest });
    }
    let mut per_length = Vec::new();
    let (mut sum, mut count) = (0.0, 0);
    for &len in lengths {
        let (mut s, mut c) = (0.0, 0);
        for first in (0..r.len()).step_by(RTE_STEP) {
            let target = dist[first] + len;
            let last = dist.partition_point(|d| *d < target);
            if last >= r.len() {
                break;
            }
            let rel_ref = r[first].inverse().compose(&r[last]);
            let rel_est = e[first].inverse().compose(&e[last]);
            s += rel_ref.inverse().compose(&rel_est).translation.norm() / len;
            c += 1;
        }
        if c > 0 {
            per_length.push((len, 100.0 * s / c as f64, c));
            sum += s;
            count += c;
        }
    }
    if count == 0 {
        return Err(MetricsError::InsufficientLength { length: total, required: shortest });
    }
    Ok(RteReport { percent: 100.0 * sum / count as f64, segments: count, per_length })
}
