//! Spatially hashed world-frame point map.
//!
//! Each voxel keeps at most `max_points_per_voxel` points; once a voxel is
//! full, further points landing in it are discarded so that the oldest
//! geometry is kept. A FIFO policy would be the obvious alternative.
//!
//! Neighbor queries visit the query voxel and its six face neighbors. The map
//! is only mutated between optimization rounds; during registration it is
//! shared read-only.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hash, Hasher};
use std::io::{self, Write};

use thiserror::Error;

use crate::liegroup::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VoxelKey {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelKey {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    #[inline]
    fn offset(self, dx: i32, dy: i32, dz: i32) -> Self {
        Self { x: self.x + dx, y: self.y + dy, z: self.z + dz }
    }

    /// Center of the voxel in world coordinates.
    pub fn center(self, voxel_size: f64) -> Vec3 {
        Vec3::new(self.x as f64 + 0.5, self.y as f64 + 0.5, self.z as f64 + 0.5) * voxel_size
    }
}

impl Hash for VoxelKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        // Teschner et al. spatial hash primes.
        let h = (self.x as i64 as u64).wrapping_mul(73_856_093)
            ^ (self.y as i64 as u64).wrapping_mul(19_349_669)
            ^ (self.z as i64 as u64).wrapping_mul(83_492_791);
        state.write_u64(h);
    }
}

/// Per-axis `floor(p / voxel_size)`.
#[inline]
pub fn voxel_key(p: &Vec3, voxel_size: f64) -> VoxelKey {
    VoxelKey {
        x: (p.x / voxel_size).floor() as i32,
        y: (p.y / voxel_size).floor() as i32,
        z: (p.z / voxel_size).floor() as i32,
    }
}

/// Hasher that finalizes the single pre-mixed word written by [`VoxelKey`].
#[derive(Default, Clone, Copy)]
pub struct VoxelHasher(u64);

impl Hasher for VoxelHasher {
    fn finish(&self) -> u64 {
        // Spread entropy into the high bits, which the table uses for control bytes.
        self.0.wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }

    fn write_u64(&mut self, v: u64) {
        self.0 ^= v;
    }
}

type VoxelBuildHasher = BuildHasherDefault<VoxelHasher>;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMapConfig {
    pub voxel_size: f64,
    pub max_points_per_voxel: usize,
    /// A point closer than this to one already stored in its voxel is skipped.
    pub min_point_distance: f64,
    /// Voxels whose center is farther than this from the cull center are dropped.
    pub max_range: f64,
    /// Plane fits with `lambda_min / lambda_mid` above this are rejected.
    pub planarity_threshold: f64,
    /// Number of neighbors used for plane fitting.
    pub plane_neighbors: usize,
    /// Plane fits with a neighbor farther than this from the plane are rejected.
    pub max_plane_distance: f64,
}

impl Default for VoxelMapConfig {
    fn default() -> Self {
        Self::with_voxel_size(0.4)
    }
}

impl VoxelMapConfig {
    /// Defaults for the given voxel size; the point spacing and the plane
    /// thickness scale with it.
    pub fn with_voxel_size(voxel_size: f64) -> Self {
        Self { voxel_size, max_points_per_voxel: 20, min_point_distance: voxel_size / 2.0, max_range: 100.0, planarity_threshold: 0.1, plane_neighbors: 5, max_plane_distance: voxel_size / 20.0 }
    }
}

/// Local plane around a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    /// Unit normal, eigenvector of the smallest covariance eigenvalue.
    pub normal: Vec3,
    /// Nearest map point to the query.
    pub point: Vec3,
    /// `lambda_min / lambda_mid` of the neighbor covariance.
    pub planarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum Degenerate {
    #[error("only {found} neighbors available, {needed} required")]
    InsufficientSupport { found: usize, needed: usize },
    #[error("neighborhood is not planar (eigenvalue ratio {ratio:.3})")]
    NotPlanar { ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub point: Vec3,
    pub distance: f64,
}

const FACE_NEIGHBORHOOD: [(i32, i32, i32); 7] = [(0, 0, 0), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];

/// Largest neighbor count served by the allocation-free query path.
const MAX_PLANE_NEIGHBORS: usize = 16;

#[derive(Debug, Clone)]
pub struct VoxelMap {
    config: VoxelMapConfig,
    cells: HashMap<VoxelKey, Vec<Vec3>, VoxelBuildHasher>,
    center: Vec3,
    len: usize,
}

impl VoxelMap {
    pub fn new(config: VoxelMapConfig) -> Self {
        assert!(config.voxel_size > 0.0, "voxel size must be positive");
        assert!(config.plane_neighbors >= 3 && config.plane_neighbors <= MAX_PLANE_NEIGHBORS);
        Self { config, cells: HashMap::default(), center: Vec3::zeros(), len: 0 }
    }

    pub fn config(&self) -> &VoxelMapConfig {
        &self.config
    }

    pub fn voxel_size(&self) -> f64 {
        self.config.voxel_size
    }

    /// Number of stored points.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn voxel_count(&self) -> usize {
        self.cells.len()
    }

    /// Center of the last cull.
    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn max_occupancy(&self) -> usize {
        self.cells.values().map(Vec::len).max().unwrap_or(0)
    }

    pub fn voxel(&self, key: &VoxelKey) -> Option<&[Vec3]> {
        self.cells.get(key).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &VoxelKey> {
        self.cells.keys()
    }

    pub fn points(&self) -> impl Iterator<Item = &Vec3> {
        self.cells.values().flatten()
    }

    /// Inserts world-frame points; returns how many were stored.
    pub fn insert<I>(&mut self, points: I) -> usize
    where
        I: IntoIterator<Item = Vec3>,
    {
        let cap = self.config.max_points_per_voxel;
        let size = self.config.voxel_size;
        let min_d2 = self.config.min_point_distance * self.config.min_point_distance;
        let mut stored = 0;
        for p in points {
            if !p.iter().all(|x| x.is_finite()) {
                continue;
            }
            let cell = self.cells.entry(voxel_key(&p, size)).or_insert_with(|| Vec::with_capacity(cap));
            if cell.len() < cap && cell.iter().all(|q| (q - p).norm_squared() >= min_d2) {
                cell.push(p);
                stored += 1;
            }
        }
        self.len += stored;
        stored
    }

    /// Fills `out` with the nearest candidates, sorted by squared distance.
    /// Returns the number of valid entries.
    fn nearest_into(&self, p: &Vec3, out: &mut [(f64, Vec3)]) -> usize {
        let n = out.len();
        let mut found = 0;
        let key = voxel_key(p, self.config.voxel_size);
        for (dx, dy, dz) in FACE_NEIGHBORHOOD {
            let Some(cell) = self.cells.get(&key.offset(dx, dy, dz)) else {
                continue;
            };
            for q in cell {
                let d = (q - p).norm_squared();
                if found == n && d >= out[n - 1].0 {
                    continue;
                }
                let mut i = if found < n {
                    found += 1;
                    found - 1
                } else {
                    n - 1
                };
                while i > 0 && out[i - 1].0 > d {
                    out[i] = out[i - 1];
                    i -= 1;
                }
                out[i] = (d, *q);
            }
        }
        found
    }

    /// Up to `n` nearest points from the 7-voxel neighborhood of `p`.
    pub fn nearest_neighbors(&self, p: &Vec3, n: usize) -> Vec<Neighbor> {
        assert!(n >= 1);
        let mut buf = vec![(f64::INFINITY, Vec3::zeros()); n];
        let found = self.nearest_into(p, &mut buf);
        buf.truncate(found);
        buf.into_iter().map(|(d, point)| Neighbor { point, distance: d.sqrt() }).collect()
    }

    /// PCA plane through the nearest neighbors of `p`.
    pub fn fit_plane(&self, p: &Vec3) -> Result<PlaneFit, Degenerate> {
        let needed = self.config.plane_neighbors;
        let mut buf = [(f64::INFINITY, Vec3::zeros()); MAX_PLANE_NEIGHBORS];
        let found = self.nearest_into(p, &mut buf[..needed]);
        if found < needed {
            return Err(Degenerate::InsufficientSupport { found, needed });
        }
        let pts = &buf[..needed];
        let mean = pts.iter().fold(Vec3::zeros(), |acc, (_, q)| acc + q) / needed as f64;
        let mut cov = Mat3::zeros();
        for (_, q) in pts {
            let d = q - mean;
            cov += d * d.transpose();
        }
        cov /= needed as f64;
        let (eig, normal) = symmetric_eigen3(&cov);
        let ratio = if eig[1] > 0.0 { eig[0].max(0.0) / eig[1] } else { f64::INFINITY };
        if !(ratio <= self.config.planarity_threshold) {
            return Err(Degenerate::NotPlanar { ratio });
        }
        if pts.iter().any(|(_, q)| normal.dot(&(q - mean)).abs() > self.config.max_plane_distance) {
            return Err(Degenerate::NotPlanar { ratio });
        }
        Ok(PlaneFit { normal, point: pts[0].1, planarity: ratio })
    }

    /// Removes voxels whose center is beyond `max_range` of `center`.
    pub fn cull(&mut self, center: &Vec3) -> usize {
        let size = self.config.voxel_size;
        let r2 = self.config.max_range * self.config.max_range;
        let before = self.cells.len();
        let mut removed_points = 0;
        self.cells.retain(|key, cell| {
            let keep = (key.center(size) - center).norm_squared() <= r2;
            if !keep {
                removed_points += cell.len();
            }
            keep
        });
        self.len -= removed_points;
        self.center = *center;
        before - self.cells.len()
    }

    /// ASCII PLY with one `x y z` vertex per stored point.
    pub fn write_ply<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", self.len)?;
        writeln!(out, "property float x\nproperty float y\nproperty float z\nend_header")?;
        let mut keys: Vec<_> = self.cells.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            for p in &self.cells[&key] {
                writeln!(out, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
            }
        }
        Ok(())
    }
}

/// Closed-form eigen-decomposition of a symmetric 3x3 matrix.
///
/// Returns eigenvalues in ascending order and the unit eigenvector of the
/// smallest one.
pub fn symmetric_eigen3(a: &Mat3) -> ([f64; 3], Vec3) {
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let q = a.trace() / 3.0;
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    if p2 <= f64::MIN_POSITIVE || p1 == 0.0 {
        let mut diag = [(a[(0, 0)], 0usize), (a[(1, 1)], 1), (a[(2, 2)], 2)];
        diag.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut v = Vec3::zeros();
        v[diag[0].1] = 1.0;
        return ([diag[0].0, diag[1].0, diag[2].0], v);
    }
    let p = (p2 / 6.0).sqrt();
    let b = (a - Mat3::identity() * q) / p;
    let r = (0.5 * b.determinant()).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let largest = q + 2.0 * p * phi.cos();
    let smallest = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let middle = 3.0 * q - largest - smallest;

    let m = a - Mat3::identity() * smallest;
    let (r0, r1, r2) = (m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose());
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let best = candidates.iter().max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared())).unwrap();
    let n = best.norm();
    let v = if n > 0.0 { best / n } else { Vec3::z() };
    ([smallest, middle, largest], v)
}
