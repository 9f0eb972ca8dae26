//! Ternary occupancy grid of what the robot has seen.

use serde::{Deserialize, Serialize};

use super::Observation;
use crate::geometry::{Aabb, Point, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum VoxelState {
    Unknown = 0,
    Free = 1,
    Occupied = 2,
}

/// Height below which unknown space is counted.
pub const COUNTED_HEIGHT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct KnownSpaceGrid {
    origin: [f64; 3],
    dims: [usize; 3],
    resolution: f64,
    cells: Vec<VoxelState>,
}

impl KnownSpaceGrid {
    pub fn new(bounds: &Aabb, resolution: f64) -> Self {
        let dims = [0, 1, 2].map(|k| ((bounds.extent(k) / resolution).ceil() as usize).max(1));
        Self {
            origin: bounds.min,
            dims,
            resolution,
            cells: vec![VoxelState::Unknown; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    fn index(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    pub fn cell_of(&self, p: &Point) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for k in 0..3 {
            let f = ((p[k] - self.origin[k]) / self.resolution).floor();
            if f < 0.0 || f >= self.dims[k] as f64 {
                return None;
            }
            out[k] = f as usize;
        }
        Some(out)
    }

    pub fn cell_center(&self, c: [usize; 3]) -> Point {
        Point::new(
            self.origin[0] + (c[0] as f64 + 0.5) * self.resolution,
            self.origin[1] + (c[1] as f64 + 0.5) * self.resolution,
            self.origin[2] + (c[2] as f64 + 0.5) * self.resolution,
        )
    }

    pub fn get(&self, c: [usize; 3]) -> VoxelState {
        self.cells[self.index(c)]
    }

    pub fn state_at(&self, p: &Point) -> Option<VoxelState> {
        self.cell_of(p).map(|c| self.get(c))
    }

    /// Cells crossed by the segment from `origin` along `dir` for `length`,
    /// in order, including the cell holding the end point.
    pub fn traverse(&self, origin: &Point, dir: &Vector, length: f64) -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        let Some(mut cell) = self.cell_of(origin) else {
            return out;
        };
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for k in 0..3 {
            if dir[k] > 1e-12 {
                step[k] = 1;
                let edge = self.origin[k] + (cell[k] as f64 + 1.0) * self.resolution;
                t_max[k] = (edge - origin[k]) / dir[k];
                t_delta[k] = self.resolution / dir[k];
            } else if dir[k] < -1e-12 {
                step[k] = -1;
                let edge = self.origin[k] + cell[k] as f64 * self.resolution;
                t_max[k] = (edge - origin[k]) / dir[k];
                t_delta[k] = -self.resolution / dir[k];
            }
        }
        loop {
            out.push(cell);
            let k = (0..3)
                .min_by(|a, b| t_max[*a].total_cmp(&t_max[*b]))
                .expect("three axes");
            if t_max[k] > length {
                break;
            }
            let next = cell[k] as i64 + step[k];
            if next < 0 || next >= self.dims[k] as i64 {
                break;
            }
            cell[k] = next as usize;
            t_max[k] += t_delta[k];
        }
        out
    }

    /// Carves free space along every ray, then marks every return occupied.
    /// Applying the same observation twice leaves the grid unchanged.
    pub fn update(&mut self, obs: &Observation) {
        let origin = obs.origin();
        for r in &obs.free_rays {
            for c in self.traverse(&origin, &r.direction, r.length) {
                let i = self.index(c);
                if self.cells[i] == VoxelState::Unknown {
                    self.cells[i] = VoxelState::Free;
                }
            }
        }
        let mut hits = Vec::with_capacity(obs.points.len());
        for p in &obs.points {
            let d = p.position - origin;
            let len = d.norm();
            let Some(hit) = self.cell_of(&p.position) else {
                continue;
            };
            hits.push(hit);
            if len < 1e-12 {
                continue;
            }
            for c in self.traverse(&origin, &(d / len), len) {
                if c == hit {
                    break;
                }
                let i = self.index(c);
                if self.cells[i] == VoxelState::Unknown {
                    self.cells[i] = VoxelState::Free;
                }
            }
        }
        for c in hits {
            let i = self.index(c);
            self.cells[i] = VoxelState::Occupied;
        }
    }

    pub fn count(&self, state: VoxelState) -> usize {
        self.cells.iter().filter(|c| **c == state).count()
    }

    /// Fraction of cells below the counted height that are still unknown.
    pub fn unknown_fraction(&self) -> f64 {
        let layers = ((COUNTED_HEIGHT / self.resolution).round() as usize).min(self.dims[2]);
        let per_layer = self.dims[0] * self.dims[1];
        let counted = &self.cells[..layers * per_layer];
        if counted.is_empty() {
            return 0.0;
        }
        let unknown = counted.iter().filter(|c| **c == VoxelState::Unknown).count();
        unknown as f64 / counted.len() as f64
    }

    /// Number of unknown cells inside an axis-aligned region.
    pub fn unknown_in(&self, region: &Aabb) -> usize {
        let mut n = 0;
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let c = [x, y, z];
                    if self.get(c) == VoxelState::Unknown && region.contains(&self.cell_center(c), 0.0)
                    {
                        n += 1;
                    }
                }
            }
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraPose;
    use crate::scene::bundled_scene;
    use crate::world::WorldState;
    use std::sync::Arc;

    #[test]
    fn traversal_visits_adjacent_cells() {
        let g = KnownSpaceGrid::new(&Aabb::new([0.0; 3], [1.0; 3]), 0.1);
        let o = Point::new(0.05, 0.05, 0.05);
        let d = Vector::new(1.0, 0.7, 0.3).normalize();
        let cells = g.traverse(&o, &d, 1.0);
        assert_eq!(cells[0], [0, 0, 0]);
        for w in cells.windows(2) {
            let dist: i64 = (0..3).map(|k| (w[0][k] as i64 - w[1][k] as i64).abs()).sum();
            assert_eq!(dist, 1);
        }
        let end = o + d * 1.0;
        assert_eq!(*cells.last().unwrap(), g.cell_of(&end).unwrap());
    }

    #[test]
    fn update_is_idempotent_and_monotone() {
        let w = WorldState::new(Arc::new(bundled_scene("household").unwrap()), 0.05);
        let mut grid = KnownSpaceGrid::new(&w.spec().room_bounds, 0.05);
        let start = grid.unknown_fraction();
        let obs = w.render_observation(&w.camera_pose(), 3_000).unwrap();
        grid.update(&obs);
        let after = grid.clone();
        assert!(grid.unknown_fraction() < start);
        grid.update(&obs);
        assert_eq!(grid, after);
        let other = CameraPose::new(Point::new(0.5, -1.0, 0.8), 2.0, -0.3);
        let obs2 = w.render_observation(&other, 3_000).unwrap();
        let before = grid.unknown_fraction();
        grid.update(&obs2);
        assert!(grid.unknown_fraction() <= before);
    }
}
