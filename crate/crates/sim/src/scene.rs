//! Planar scenes and ray casting.

use ctlo_core::liegroup::Vec3;

/// Extent slack so rays through a shared edge still hit one of the faces.
const EDGE_EPS: f64 = 1e-9;

/// A rectangle: `center + a * u + b * v` for `|a| <= half_u`, `|b| <= half_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub center: Vec3,
    pub normal: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub half_u: f64,
    pub half_v: f64,
}

impl Plane {
    /// Rectangle spanned by the half-edge vectors `u` and `v` (orthogonal).
    pub fn rect(center: Vec3, u: Vec3, v: Vec3) -> Self {
        let (half_u, half_v) = (u.norm(), v.norm());
        let (u, v) = (u / half_u, v / half_v);
        Self { center, normal: u.cross(&v).normalize(), u, v, half_u, half_v }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(&(p - self.center))
    }

    /// Whether `p` lies on the rectangle within `tol`.
    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        let d = p - self.center;
        self.signed_distance(p).abs() <= tol && self.u.dot(&d).abs() <= self.half_u + tol && self.v.dot(&d).abs() <= self.half_v + tol
    }

    /// Ray parameter of the hit, if the ray meets the rectangle ahead of its origin.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = self.normal.dot(&(self.center - origin)) / denom;
        if s <= 1e-9 {
            return None;
        }
        let d = origin + dir * s - self.center;
        let inside = self.u.dot(&d).abs() <= self.half_u + EDGE_EPS && self.v.dot(&d).abs() <= self.half_v + EDGE_EPS;
        inside.then_some(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub plane: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub planes: Vec<Plane>,
}

impl Scene {
    pub fn new(planes: Vec<Plane>) -> Self {
        Self { planes }
    }

    /// Axis-aligned box with inward normals: `-x, +x, -y, +y, floor, ceiling`.
    pub fn room(lo: Vec3, hi: Vec3) -> Self {
        let c = (lo + hi) / 2.0;
        let h = (hi - lo) / 2.0;
        let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
        Self::new(vec![
            Plane::rect(Vec3::new(lo.x, c.y, c.z), y * h.y, z * h.z),
            Plane::rect(Vec3::new(hi.x, c.y, c.z), z * h.z, y * h.y),
            Plane::rect(Vec3::new(c.x, lo.y, c.z), z * h.z, x * h.x),
            Plane::rect(Vec3::new(c.x, hi.y, c.z), x * h.x, z * h.z),
            Plane::rect(Vec3::new(c.x, c.y, lo.z), x * h.x, y * h.y),
            Plane::rect(Vec3::new(c.x, c.y, hi.z), y * h.y, x * h.x),
        ])
    }

    /// A room of `length x width x height` starting at the origin corner,
    /// centered on `y = 0`, with thin fins of depth `fin` protruding from
    /// both side walls every `spacing` meters. The fins make the long axis
    /// observable from vertical surfaces alone.
    pub fn corridor(length: f64, width: f64, height: f64, spacing: f64, fin: f64) -> Self {
        let mut scene = Self::room(Vec3::new(0.0, -width / 2.0, 0.0), Vec3::new(length, width / 2.0, height));
        let mut x = spacing;
        while x < length - 1e-6 {
            for side in [-1.0, 1.0] {
                let center = Vec3::new(x, side * (width / 2.0 - fin / 2.0), height / 2.0);
                scene.planes.push(Plane::rect(center, Vec3::y() * (fin / 2.0), Vec3::z() * (height / 2.0)));
            }
            x += spacing;
        }
        scene
    }

    /// Nearest hit along a unit direction.
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        self.raycast_filtered(origin, dir, |_| true)
    }

    /// Nearest hit among the planes accepted by `visible`.
    pub fn raycast_filtered(&self, origin: &Vec3, dir: &Vec3, visible: impl Fn(usize) -> bool) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, plane) in self.planes.iter().enumerate() {
            if !visible(i) {
                continue;
            }
            if let Some(s) = plane.intersect(origin, dir) {
                if best.is_none_or(|b| s < b.distance) {
                    best = Some(Hit { distance: s, plane: i });
                }
            }
        }
        best
    }

    /// Distance from `p` to the nearest plane whose extent covers its projection.
    pub fn distance_to_surface(&self, p: &Vec3) -> f64 {
        self.planes
            .iter()
            .filter(|pl| {
                let d = p - pl.center;
                pl.u.dot(&d).abs() <= pl.half_u + EDGE_EPS && pl.v.dot(&d).abs() <= pl.half_v + EDGE_EPS
            })
            .map(|pl| pl.signed_distance(p).abs())
            .fold(f64::INFINITY, f64::min)
    }
}
