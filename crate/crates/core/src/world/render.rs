//! Analytic ray casting of the visible scene.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{WorldError, WorldState};
use crate::geometry::{CameraPose, Point, Vector};

pub const FOV_H: f64 = 60.0 * std::f64::consts::PI / 180.0;
pub const FOV_V: f64 = 45.0 * std::f64::consts::PI / 180.0;
pub const DEFAULT_RAY_BUDGET: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedPoint {
    pub position: Point,
    /// Index of the object the ray hit. Used for evaluation only.
    pub object: usize,
}

/// A ray that ended without a return: it left the room or entered an
/// opaque region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeRay {
    pub direction: Vector,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub camera: CameraPose,
    pub points: Vec<ObservedPoint>,
    pub free_rays: Vec<FreeRay>,
    pub timestamp: u64,
}

impl Observation {
    pub fn origin(&self) -> Point {
        self.camera.origin()
    }
}

/// Ray grid dimensions for a budget: a 4:3 grid that never exceeds it.
pub fn ray_grid(budget: usize) -> (usize, usize) {
    let rows = ((budget as f64 * 0.75).sqrt().floor() as usize).max(1);
    let cols = (budget / rows).max(1);
    (rows, cols)
}

/// Unit ray directions of a pinhole camera, row-major from top left.
pub fn ray_directions(pose: &CameraPose, budget: usize) -> Vec<Vector> {
    let (rows, cols) = ray_grid(budget);
    let (forward, right, up) = pose.frame();
    let th = (FOV_H / 2.0).tan();
    let tv = (FOV_V / 2.0).tan();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let v = tv * (1.0 - 2.0 * (r as f64 + 0.5) / rows as f64);
        for c in 0..cols {
            let u = th * (2.0 * (c as f64 + 0.5) / cols as f64 - 1.0);
            out.push((forward + right * u + up * v).normalize());
        }
    }
    out
}

enum RayResult {
    Hit(ObservedPoint),
    Free(FreeRay),
}

impl WorldState {
    /// Renders a point observation from `pose` with at most `ray_budget`
    /// rays. Returned points lie on surfaces of present, unhidden objects.
    pub fn render_observation(
        &self,
        pose: &CameraPose,
        ray_budget: usize,
    ) -> Result<Observation, WorldError> {
        if ray_budget == 0 {
            return Err(WorldError::EmptyRayBudget);
        }
        let origin = pose.origin();
        let room = &self.spec().room_bounds;
        if !room.contains(&origin, 1e-9) {
            return Err(WorldError::PoseOutsideRoom(pose.position));
        }
        let solids = self.solids();
        let opaque = self.opaque_regions();
        let dirs = ray_directions(pose, ray_budget);
        let results: Vec<RayResult> = dirs
            .par_iter()
            .map(|dir| {
                let exit = room
                    .ray_interval(&origin, dir)
                    .map(|(_, t1)| t1)
                    .unwrap_or(0.0);
                let blocked = opaque
                    .iter()
                    .filter_map(|r| r.ray_hit(&origin, dir))
                    .map(|h| h.t)
                    .fold(exit, f64::min);
                let mut best: Option<(f64, usize)> = None;
                for s in &solids {
                    if let Some(h) = s.shape.ray_hit(&origin, dir) {
                        if best.is_none_or(|(t, _)| h.t < t) {
                            best = Some((h.t, s.object));
                        }
                    }
                }
                match best {
                    Some((t, object)) if t < blocked || (t <= exit && t == blocked) => {
                        RayResult::Hit(ObservedPoint {
                            position: origin + dir * t,
                            object,
                        })
                    }
                    _ => RayResult::Free(FreeRay {
                        direction: *dir,
                        length: blocked,
                    }),
                }
            })
            .collect();
        let mut points = Vec::new();
        let mut free_rays = Vec::new();
        for r in results {
            match r {
                RayResult::Hit(p) => points.push(p),
                RayResult::Free(f) => free_rays.push(f),
            }
        }
        Ok(Observation {
            camera: *pose,
            points,
            free_rays,
            timestamp: self.tick,
        })
    }
}
