//! Geometric primitives shared by the scene model, the simulator and the
//! graph builder: planar robot poses, camera poses, oriented boxes and the
//! global voxel lattice.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

pub type Point = Point3<f64>;
pub type Vector = Vector3<f64>;

/// Global voxel resolution (m) used for rendering, occupancy and IoU.
pub const VOXEL_RESOLUTION: f64 = 0.05;

/// Integer voxel coordinate under floor quantization.
pub type VoxelKey = [i32; 3];

pub fn voxel_key(p: &Point, resolution: f64) -> VoxelKey {
    [
        (p.x / resolution).floor() as i32,
        (p.y / resolution).floor() as i32,
        (p.z / resolution).floor() as i32,
    ]
}

pub fn voxel_center(key: VoxelKey, resolution: f64) -> Point {
    Point::new(
        (key[0] as f64 + 0.5) * resolution,
        (key[1] as f64 + 0.5) * resolution,
        (key[2] as f64 + 0.5) * resolution,
    )
}

/// Planar robot pose: position in meters, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn distance(&self, other: &Pose2D) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Camera pose with zero roll. `pitch` is positive when looking up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl CameraPose {
    pub fn new(position: Point, yaw: f64, pitch: f64) -> Self {
        Self {
            position: [position.x, position.y, position.z],
            yaw,
            pitch,
            roll: 0.0,
        }
    }

    pub fn origin(&self) -> Point {
        Point::new(self.position[0], self.position[1], self.position[2])
    }

    /// Orthonormal (forward, right, up) camera frame.
    pub fn frame(&self) -> (Vector, Vector, Vector) {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let forward = Vector::new(cp * cy, cp * sy, sp);
        let right = Vector::new(sy, -cy, 0.0);
        let up = right.cross(&forward);
        (forward, right, up)
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut min = [first.x, first.y, first.z];
        let mut max = min;
        for p in it {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Some(Self { min, max })
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - tol && p[k] <= self.max[k] + tol)
    }

    pub fn center(&self) -> Point {
        Point::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    /// Ray/box slab test. Returns (t_enter, t_exit) with t_enter clamped at 0.
    pub fn ray_interval(&self, origin: &Point, dir: &Vector) -> Option<(f64, f64)> {
        let mut t0 = 0.0_f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if dir[k].abs() < 1e-12 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let mut a = (self.min[k] - origin[k]) * inv;
            let mut b = (self.max[k] - origin[k]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Box with a center, full edge lengths and a rotation about +z.
///
/// The local +x axis is the object's front.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrientedBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

/// Result of a ray/box intersection.
#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    pub t: f64,
    pub normal: Vector,
}

impl OrientedBox {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64) -> Self {
        Self { center, size, yaw }
    }

    pub fn center_point(&self) -> Point {
        Point::new(self.center[0], self.center[1], self.center[2])
    }

    pub fn half(&self) -> Vector {
        Vector::new(self.size[0] * 0.5, self.size[1] * 0.5, self.size[2] * 0.5)
    }

    pub fn bottom(&self) -> f64 {
        self.center[2] - 0.5 * self.size[2]
    }

    pub fn top(&self) -> f64 {
        self.center[2] + 0.5 * self.size[2]
    }

    /// World direction of the local +x axis.
    pub fn front(&self) -> Vector {
        Vector::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    /// World direction of the local +y axis.
    pub fn lateral(&self) -> Vector {
        Vector::new(-self.yaw.sin(), self.yaw.cos(), 0.0)
    }

    pub fn translated(&self, d: &Vector) -> Self {
        Self {
            center: [self.center[0] + d.x, self.center[1] + d.y, self.center[2] + d.z],
            ..*self
        }
    }

    pub fn to_local(&self, p: &Point) -> Vector {
        let d = p - self.center_point();
        let (s, c) = self.yaw.sin_cos();
        Vector::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn dir_to_local(&self, v: &Vector) -> Vector {
        let (s, c) = self.yaw.sin_cos();
        Vector::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
    }

    pub fn to_world(&self, local: &Vector) -> Point {
        let (s, c) = self.yaw.sin_cos();
        Point::new(
            self.center[0] + c * local.x - s * local.y,
            self.center[1] + s * local.x + c * local.y,
            self.center[2] + local.z,
        )
    }

    pub fn dir_to_world(&self, local: &Vector) -> Vector {
        let (s, c) = self.yaw.sin_cos();
        Vector::new(c * local.x - s * local.y, s * local.x + c * local.y, local.z)
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        let l = self.to_local(p);
        let h = self.half();
        (0..3).all(|k| l[k].abs() <= h[k] + tol)
    }

    pub fn corners(&self) -> [Point; 8] {
        let h = self.half();
        let mut out = [Point::origin(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *c = self.to_world(&Vector::new(sx * h.x, sy * h.y, sz * h.z));
        }
        out
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(self.corners().iter()).expect("eight corners")
    }

    pub fn distance_to_point(&self, p: &Point) -> f64 {
        let l = self.to_local(p);
        let h = self.half();
        let d = Vector::new(
            (l.x.abs() - h.x).max(0.0),
            (l.y.abs() - h.y).max(0.0),
            (l.z.abs() - h.z).max(0.0),
        );
        d.norm()
    }

    /// Planar distance from (x, y) to the box footprint.
    pub fn footprint_distance(&self, x: f64, y: f64) -> f64 {
        let l = self.to_local(&Point::new(x, y, self.center[2]));
        let h = self.half();
        let dx = (l.x.abs() - h.x).max(0.0);
        let dy = (l.y.abs() - h.y).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    /// Nearest intersection of a ray with the box surface, ignoring hits
    /// behind the origin. A ray starting inside the box reports `t = 0`.
    pub fn ray_hit(&self, origin: &Point, dir: &Vector) -> Option<RayHit> {
        let o = self.to_local(origin);
        let d = self.dir_to_local(dir);
        let h = self.half();
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        let mut axis0 = 0usize;
        let mut sign0 = 0.0;
        for k in 0..3 {
            if d[k].abs() < 1e-12 {
                if o[k].abs() > h[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[k];
            let a = (-h[k] - o[k]) * inv;
            let b = (h[k] - o[k]) * inv;
            let (near, far, s) = if a < b { (a, b, -1.0) } else { (b, a, 1.0) };
            if near > t0 {
                t0 = near;
                axis0 = k;
                sign0 = s;
            }
            t1 = t1.min(far);
        }
        if t0 > t1 || t1 < 0.0 {
            return None;
        }
        if t0 < 0.0 {
            return Some(RayHit {
                t: 0.0,
                normal: -dir.normalize(),
            });
        }
        let mut ln = Vector::zeros();
        ln[axis0] = sign0;
        Some(RayHit {
            t: t0,
            normal: self.dir_to_world(&ln),
        })
    }

    /// Surface samples on a lattice of the given spacing, with outward
    /// normals. Every face edge is included; shared edge samples are emitted
    /// once.
    pub fn surface_samples(&self, spacing: f64) -> Vec<(Point, Vector)> {
        let h = self.half();
        let mut out = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for axis in 0..3 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let nu = ((2.0 * h[u]) / spacing).ceil().max(1.0) as usize;
            let nv = ((2.0 * h[v]) / spacing).ceil().max(1.0) as usize;
            for sign in [-1.0, 1.0] {
                for i in 0..=nu {
                    for j in 0..=nv {
                        let mut l = Vector::zeros();
                        l[axis] = sign * h[axis];
                        l[u] = -h[u] + 2.0 * h[u] * i as f64 / nu as f64;
                        l[v] = -h[v] + 2.0 * h[v] * j as f64 / nv as f64;
                        let key = [
                            (l.x * 1e7).round() as i64,
                            (l.y * 1e7).round() as i64,
                            (l.z * 1e7).round() as i64,
                        ];
                        if !seen.insert(key) {
                            continue;
                        }
                        let mut n = Vector::zeros();
                        n[axis] = sign;
                        out.push((self.to_world(&l), self.dir_to_world(&n)));
                    }
                }
            }
        }
        out
    }
}

pub fn centroid(points: &[Point]) -> Option<Point> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vector::zeros(), |acc, p| acc + p.coords);
    Some(Point::from(sum / points.len() as f64))
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}
