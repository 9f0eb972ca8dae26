//! Planar navigation on a clearance grid.

use pathfinding::prelude::astar;
use serde::{Deserialize, Serialize};

use super::{WorldError, WorldState, STANDING_HEIGHT};
use crate::geometry::{OrientedBox, Pose2D};
use crate::scene::Phase;

pub const ROBOT_RADIUS: f64 = 0.35;
const STRAIGHT_STEP: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavReport {
    pub path_length: f64,
    pub straight: bool,
}

impl WorldState {
    /// Footprints the robot body may not overlap.
    pub fn nav_obstacles(&self) -> Vec<OrientedBox> {
        let mut out: Vec<OrientedBox> = self
            .objects()
            .iter()
            .filter(|o| {
                let s = self.state(o.index);
                !s.collected && !self.is_hidden(o.index) && s.phase != Phase::Lifted
            })
            .map(|o| *self.geometry(o.index))
            .collect();
        out.extend(self.opaque_regions());
        out
    }

    /// Distance from a floor position to the nearest obstacle or wall.
    pub fn clearance(&self, x: f64, y: f64) -> f64 {
        self.clearance_among(&self.nav_obstacles(), x, y)
    }

    fn clearance_among(&self, obstacles: &[OrientedBox], x: f64, y: f64) -> f64 {
        let b = &self.spec().room_bounds;
        let wall = (x - b.min[0])
            .min(b.max[0] - x)
            .min(y - b.min[1])
            .min(b.max[1] - y);
        obstacles
            .iter()
            .map(|o| o.footprint_distance(x, y))
            .fold(wall, f64::min)
    }

    pub fn is_free(&self, x: f64, y: f64) -> bool {
        self.clearance(x, y) >= ROBOT_RADIUS
    }

    /// Moves the robot to `goal` along a collision-free path and returns
    /// the path length. The camera returns to standing height.
    pub fn navigate(&mut self, goal: Pose2D) -> Result<NavReport, WorldError> {
        let obstacles = self.nav_obstacles();
        let free = |x: f64, y: f64| self.clearance_among(&obstacles, x, y) >= ROBOT_RADIUS;
        if !free(goal.x, goal.y) {
            return Err(WorldError::GoalNotFree {
                x: goal.x,
                y: goal.y,
            });
        }
        let start = self.robot;
        let dx = goal.x - start.x;
        let dy = goal.y - start.y;
        let dist = (dx * dx + dy * dy).sqrt();
        let n = (dist / STRAIGHT_STEP).ceil() as usize;
        let straight = (1..=n).all(|i| {
            let f = i as f64 / n as f64;
            free(start.x + dx * f, start.y + dy * f)
        });
        let report = if straight {
            NavReport {
                path_length: dist,
                straight: true,
            }
        } else {
            let grid = FreeGrid::build(self, &free);
            let length = grid
                .path_length(start.x, start.y, goal.x, goal.y)
                .ok_or(WorldError::Unreachable {
                    x: goal.x,
                    y: goal.y,
                })?;
            NavReport {
                path_length: length,
                straight: false,
            }
        };
        self.robot = goal;
        self.camera_height = STANDING_HEIGHT;
        self.gaze = None;
        Ok(report)
    }
}

struct FreeGrid {
    origin: [f64; 2],
    res: f64,
    nx: i32,
    ny: i32,
    free: Vec<bool>,
}

impl FreeGrid {
    fn build(world: &WorldState, free: &dyn Fn(f64, f64) -> bool) -> Self {
        let b = &world.spec().room_bounds;
        let res = world.resolution;
        let nx = ((b.max[0] - b.min[0]) / res).ceil() as i32;
        let ny = ((b.max[1] - b.min[1]) / res).ceil() as i32;
        let mut cells = Vec::with_capacity((nx * ny) as usize);
        for j in 0..ny {
            for i in 0..nx {
                let x = b.min[0] + (i as f64 + 0.5) * res;
                let y = b.min[1] + (j as f64 + 0.5) * res;
                cells.push(free(x, y));
            }
        }
        Self {
            origin: [b.min[0], b.min[1]],
            res,
            nx,
            ny,
            free: cells,
        }
    }

    fn is_free(&self, (i, j): (i32, i32)) -> bool {
        i >= 0 && j >= 0 && i < self.nx && j < self.ny && self.free[(j * self.nx + i) as usize]
    }

    fn center(&self, (i, j): (i32, i32)) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.res,
            self.origin[1] + (j as f64 + 0.5) * self.res,
        ]
    }

    /// Free cell nearest to a position, searched in growing rings.
    fn nearest_free(&self, x: f64, y: f64) -> Option<(i32, i32)> {
        let ci = ((x - self.origin[0]) / self.res).floor() as i32;
        let cj = ((y - self.origin[1]) / self.res).floor() as i32;
        for r in 0..4 {
            let mut best: Option<((i32, i32), f64)> = None;
            for j in cj - r..=cj + r {
                for i in ci - r..=ci + r {
                    if (i - ci).abs().max((j - cj).abs()) != r || !self.is_free((i, j)) {
                        continue;
                    }
                    let c = self.center((i, j));
                    let d = (c[0] - x).hypot(c[1] - y);
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some(((i, j), d));
                    }
                }
            }
            if let Some((c, _)) = best {
                return Some(c);
            }
        }
        None
    }

    fn path_length(&self, sx: f64, sy: f64, gx: f64, gy: f64) -> Option<f64> {
        const ORTH: u64 = 1000;
        const DIAG: u64 = 1415;
        let start = self.nearest_free(sx, sy)?;
        let goal = self.nearest_free(gx, gy)?;
        let (path, _) = astar(
            &start,
            |&(i, j)| {
                let mut out = Vec::with_capacity(8);
                for (di, dj) in [
                    (1, 0),
                    (-1, 0),
                    (0, 1),
                    (0, -1),
                    (1, 1),
                    (1, -1),
                    (-1, 1),
                    (-1, -1),
                ] {
                    let n = (i + di, j + dj);
                    if !self.is_free(n) {
                        continue;
                    }
                    if di != 0 && dj != 0 {
                        if !self.is_free((i + di, j)) || !self.is_free((i, j + dj)) {
                            continue;
                        }
                        out.push((n, DIAG));
                    } else {
                        out.push((n, ORTH));
                    }
                }
                out
            },
            |&(i, j)| {
                let a = (i - goal.0).unsigned_abs() as u64;
                let b = (j - goal.1).unsigned_abs() as u64;
                ORTH * a.max(b) + (DIAG - ORTH) * a.min(b)
            },
            |&c| c == goal,
        )?;
        let mut length = 0.0;
        let mut prev = [sx, sy];
        for c in &path {
            let p = self.center(*c);
            length += (p[0] - prev[0]).hypot(p[1] - prev[1]);
            prev = p;
        }
        length += (gx - prev[0]).hypot(gy - prev[1]);
        Some(length)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::bundled_scene;
    use std::collections::VecDeque;
    use std::sync::Arc;

    /// Shortest 4-connected path on the free-cell lattice, by BFS.
    fn bfs_length(w: &WorldState, a: (f64, f64), b: (f64, f64)) -> Option<f64> {
        let obstacles = w.nav_obstacles();
        let free = |x: f64, y: f64| w.clearance_among(&obstacles, x, y) >= ROBOT_RADIUS;
        let grid = FreeGrid::build(w, &free);
        let s = grid.nearest_free(a.0, a.1)?;
        let g = grid.nearest_free(b.0, b.1)?;
        let mut dist = vec![u32::MAX; grid.free.len()];
        let idx = |c: (i32, i32)| (c.1 * grid.nx + c.0) as usize;
        dist[idx(s)] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(c) = q.pop_front() {
            if c == g {
                let sc = grid.center(s);
                let gc = grid.center(g);
                return Some(
                    dist[idx(c)] as f64 * grid.res
                        + (sc[0] - a.0).hypot(sc[1] - a.1)
                        + (gc[0] - b.0).hypot(gc[1] - b.1),
                );
            }
            for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let n = (c.0 + di, c.1 + dj);
                if grid.is_free(n) && dist[idx(n)] == u32::MAX {
                    dist[idx(n)] = dist[idx(c)] + 1;
                    q.push_back(n);
                }
            }
        }
        None
    }

    #[test]
    fn detour_is_bounded_by_lattice_oracle() {
        let mut w = WorldState::new(Arc::new(bundled_scene("push_box").unwrap()), 0.05);
        // From one side of the blocker to the other.
        let a = (-0.75, 1.3);
        let b = (0.8, 1.3);
        w.robot = Pose2D::new(a.0, a.1, 0.0);
        let oracle = bfs_length(&w, a, b).unwrap();
        let report = w.navigate(Pose2D::new(b.0, b.1, 0.0)).unwrap();
        assert!(!report.straight);
        let euclid = (b.0 - a.0).hypot(b.1 - a.1);
        assert!(report.path_length > euclid);
        assert!(report.path_length <= oracle + 1e-9);
        assert_eq!(w.robot, Pose2D::new(b.0, b.1, 0.0));
    }

    #[test]
    fn straight_line_when_unobstructed() {
        let mut w = WorldState::new(Arc::new(bundled_scene("flip_box").unwrap()), 0.05);
        let start = w.robot;
        let report = w.navigate(Pose2D::new(start.x + 0.5, start.y, 1.0)).unwrap();
        assert!(report.straight);
        assert!((report.path_length - 0.5).abs() < 1e-12);
    }

    #[test]
    fn goal_inside_footprint_is_rejected() {
        let mut w = WorldState::new(Arc::new(bundled_scene("flip_box").unwrap()), 0.05);
        let c = w.geometry(0).center;
        let before = w.robot;
        assert!(matches!(
            w.navigate(Pose2D::new(c[0], c[1], 0.0)),
            Err(WorldError::GoalNotFree { .. })
        ));
        assert_eq!(w.robot, before);
    }
}
