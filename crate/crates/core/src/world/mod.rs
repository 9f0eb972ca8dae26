//! Mutable simulated world: interaction states, object poses and the robot.
//!
//! Visibility follows the interaction states. Contents of a closed
//! container, an upright box or a covered pile are enclosed by the owner's
//! solid body. Space behind an unpushed blocker and under furniture (while
//! the camera is above sitting height) is an opaque region: rays entering
//! it end without producing a point.

mod known_space;
mod nav;
mod render;

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{voxel_key, CameraPose, OrientedBox, Point, Pose2D, Vector, VoxelKey};
use crate::graph::{ground_truth_graph_with, NodeId, ObjectGraph};
use crate::scene::{
    FlatObject, InteractionState, ObjectKind, Phase, SceneSpec, SkillKind,
};

pub use known_space::{KnownSpaceGrid, VoxelState};
pub use nav::{NavReport, ROBOT_RADIUS};
pub use render::{ray_directions, ray_grid, FreeRay, Observation, ObservedPoint, DEFAULT_RAY_BUDGET, FOV_H, FOV_V};

pub const STANDING_HEIGHT: f64 = 0.8;
pub const SITTING_HEIGHT: f64 = 0.3;
pub const STANDING_PITCH: f64 = -22.5 * std::f64::consts::PI / 180.0;
pub const SITTING_PITCH: f64 = -10.0 * std::f64::consts::PI / 180.0;
pub const GAZE_PITCH_LIMIT: f64 = 60.0 * std::f64::consts::PI / 180.0;
/// Maximum distance from the robot to a target footprint for manipulation.
pub const REACH: f64 = 1.0;
/// Lateral displacement applied by a successful push.
pub const PUSH_DISTANCE: f64 = 0.6;
/// Wall thickness of an opened container or a flipped box.
pub const WALL_THICKNESS: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("camera pose {0:?} lies outside the room")]
    PoseOutsideRoom([f64; 3]),
    #[error("navigation goal ({x:.3}, {y:.3}) is not free at robot radius")]
    GoalNotFree { x: f64, y: f64 },
    #[error("navigation goal ({x:.3}, {y:.3}) is unreachable")]
    Unreachable { x: f64, y: f64 },
    #[error("ray budget must be positive")]
    EmptyRayBudget,
}

#[derive(Debug, Error, PartialEq)]
pub enum SkillError {
    #[error("{skill} does not apply to `{object}` ({kind}, {state})")]
    Inapplicable {
        skill: SkillKind,
        object: String,
        kind: ObjectKind,
        state: String,
    },
    #[error("`{object}` is {distance:.2} m away; navigate first")]
    OutOfReach { object: String, distance: f64 },
    #[error("no object with index {0}")]
    UnknownObject(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultProfile {
    pub detector_dropout_prob: f64,
    pub label_confusion_prob: f64,
    pub point_jitter_sigma: f64,
    pub skill_failure_prob: f64,
    pub max_retries: u32,
    pub pose_noise_sigma: f64,
}

impl Default for FaultProfile {
    fn default() -> Self {
        Self {
            detector_dropout_prob: 0.0,
            label_confusion_prob: 0.0,
            point_jitter_sigma: 0.0,
            skill_failure_prob: 0.0,
            max_retries: 2,
            pose_noise_sigma: 0.0,
        }
    }
}

impl FaultProfile {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("detector_dropout_prob", self.detector_dropout_prob),
            ("label_confusion_prob", self.label_confusion_prob),
            ("skill_failure_prob", self.skill_failure_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        for (name, s) in [
            ("point_jitter_sigma", self.point_jitter_sigma),
            ("pose_noise_sigma", self.pose_noise_sigma),
        ] {
            if !(s >= 0.0) {
                return Err(format!("{name} must be non-negative, got {s}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillCommand {
    pub skill: SkillKind,
    pub target: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillFailure {
    ActionFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillOutcome {
    pub success: bool,
    pub attempts: u32,
    pub revealed_region: BTreeSet<VoxelKey>,
    pub failure_class: Option<SkillFailure>,
    /// Translation applied to the target, for skills that move it.
    pub displacement: Option<[f64; 3]>,
}

/// Body of an object as currently rendered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Solid {
    pub object: usize,
    pub shape: OrientedBox,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    spec: Arc<SceneSpec>,
    flat: Vec<FlatObject>,
    geometry: Vec<OrientedBox>,
    states: Vec<InteractionState>,
    pub robot: Pose2D,
    pub camera_height: f64,
    /// Point the camera is aimed at, if any; cleared by navigation.
    pub gaze: Option<Point>,
    pub resolution: f64,
    pub tick: u64,
}

impl WorldState {
    pub fn new(spec: Arc<SceneSpec>, resolution: f64) -> Self {
        let flat = spec.flatten();
        let geometry = flat.iter().map(|o| o.geometry).collect();
        let states = flat.iter().map(|o| o.state0).collect();
        let robot = spec.robot_start;
        Self {
            spec,
            flat,
            geometry,
            states,
            robot,
            camera_height: STANDING_HEIGHT,
            gaze: None,
            resolution,
            tick: 0,
        }
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn objects(&self) -> &[FlatObject] {
        &self.flat
    }

    pub fn geometry(&self, object: usize) -> &OrientedBox {
        &self.geometry[object]
    }

    pub fn state(&self, object: usize) -> InteractionState {
        self.states[object]
    }

    pub fn states(&self) -> &[InteractionState] {
        &self.states
    }

    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.flat.iter().position(|o| o.id == id)
    }

    pub fn is_sitting(&self) -> bool {
        self.camera_height <= SITTING_HEIGHT + 1e-9
    }

    pub fn camera_pose(&self) -> CameraPose {
        let eye = Point::new(
            self.robot.x,
            self.robot.y,
            self.spec.room_bounds.min[2] + self.camera_height,
        );
        if let Some(t) = self.gaze {
            let d = t - eye;
            let flat = (d.x * d.x + d.y * d.y).sqrt();
            if flat > 1e-6 {
                let pitch = d.z.atan2(flat).clamp(-GAZE_PITCH_LIMIT, GAZE_PITCH_LIMIT);
                return CameraPose::new(eye, d.y.atan2(d.x), pitch);
            }
        }
        let pitch = if self.is_sitting() {
            SITTING_PITCH
        } else {
            STANDING_PITCH
        };
        CameraPose::new(eye, self.robot.yaw, pitch)
    }

    /// Aims the camera at a point until the robot next moves.
    pub fn look_at(&mut self, target: Point) {
        self.gaze = Some(target);
    }

    /// Whether the owner of a hidden region currently exposes it.
    fn reveals(&self, owner: usize) -> bool {
        let o = &self.flat[owner];
        match o.kind {
            ObjectKind::FurnitureWithUnderspace => self.is_sitting(),
            ObjectKind::Plain => true,
            _ => self.states[owner].phase.reveals_contents(),
        }
    }

    /// Whether an object sits in a hidden region given current states.
    pub fn is_hidden(&self, object: usize) -> bool {
        let mut cur = self.flat[object].hider;
        while let Some(h) = cur {
            if !self.states[h].collected && !self.reveals(h) {
                return true;
            }
            cur = self.flat[h].hider;
        }
        false
    }

    pub fn hidden_region(&self, owner: usize) -> Option<OrientedBox> {
        let floor = self.spec.room_bounds.min[2];
        let o = &self.flat[owner];
        let g = &self.geometry[owner];
        match o.kind {
            ObjectKind::MovableBlocker => {
                // The region stays where the blocker originally stood.
                let g0 = &o.geometry;
                Some(g0.translated(&(-g0.front() * g0.size[0])))
            }
            ObjectKind::FurnitureWithUnderspace => {
                let h = g.bottom() - floor;
                (h > 0.0).then(|| {
                    OrientedBox::new(
                        [g.center[0], g.center[1], floor + 0.5 * h],
                        [g.size[0], g.size[1], h],
                        g.yaw,
                    )
                })
            }
            ObjectKind::Container | ObjectKind::OpenBox | ObjectKind::CoveredPile => Some(*g),
            ObjectKind::Plain => None,
        }
    }

    /// Bodies of all present, unhidden objects.
    pub(crate) fn solids(&self) -> Vec<Solid> {
        let mut out = Vec::new();
        for o in &self.flat {
            let i = o.index;
            if self.states[i].collected || self.is_hidden(i) {
                continue;
            }
            let g = self.geometry[i];
            match (o.kind, self.states[i].phase) {
                (ObjectKind::Container, Phase::Open) | (ObjectKind::OpenBox, Phase::Flipped) => {
                    for shape in open_shell(&g) {
                        out.push(Solid { object: i, shape });
                    }
                }
                (ObjectKind::CoveredPile, Phase::Lifted) => {}
                _ => out.push(Solid { object: i, shape: g }),
            }
        }
        out
    }

    /// Opaque empty regions: space behind unpushed blockers and, while
    /// standing, under furniture.
    pub(crate) fn opaque_regions(&self) -> Vec<OrientedBox> {
        self.flat
            .iter()
            .filter(|o| {
                matches!(
                    o.kind,
                    ObjectKind::MovableBlocker | ObjectKind::FurnitureWithUnderspace
                ) && !self.reveals(o.index)
                    && !self.is_hidden(o.index)
            })
            .filter_map(|o| self.hidden_region(o.index))
            .collect()
    }

    /// Voxel occupancy: each occupied voxel maps to the object filling it.
    pub fn occupancy(&self) -> std::collections::BTreeMap<VoxelKey, usize> {
        let mut out = std::collections::BTreeMap::new();
        let step = self.resolution * 0.5;
        for s in self.solids() {
            let h = s.shape.half();
            let n = [
                ((2.0 * h.x) / step).ceil().max(1.0) as usize,
                ((2.0 * h.y) / step).ceil().max(1.0) as usize,
                ((2.0 * h.z) / step).ceil().max(1.0) as usize,
            ];
            for i in 0..=n[0] {
                for j in 0..=n[1] {
                    for k in 0..=n[2] {
                        let l = Vector::new(
                            -h.x + 2.0 * h.x * i as f64 / n[0] as f64,
                            -h.y + 2.0 * h.y * j as f64 / n[1] as f64,
                            -h.z + 2.0 * h.z * k as f64 / n[2] as f64,
                        );
                        let p = s.shape.to_world(&l);
                        out.entry(voxel_key(&p, self.resolution)).or_insert(s.object);
                    }
                }
            }
        }
        out
    }

    /// Ground truth scored against the world as it stands now.
    pub fn current_ground_truth(&self) -> ObjectGraph {
        ground_truth_graph_with(&self.spec, &self.geometry, &self.states)
    }

    /// Present object whose body is closest to `p`, preferring the smaller
    /// body on ties (a toy inside an open cabinet over the cabinet).
    pub fn object_near(&self, p: &Point, max_distance: f64) -> Option<usize> {
        let mut best: Option<(f64, f64, usize)> = None;
        for o in &self.flat {
            let i = o.index;
            if self.states[i].collected || self.is_hidden(i) {
                continue;
            }
            let d = self.geometry[i].distance_to_point(p);
            if d > max_distance {
                continue;
            }
            let key = ((d * 1e6).round(), self.geometry[i].volume());
            if best.is_none_or(|(bd, bv, _)| key < (bd, bv)) {
                best = Some((key.0, key.1, i));
            }
        }
        best.map(|b| b.2)
    }

    fn voxels_in(&self, region: &OrientedBox) -> BTreeSet<VoxelKey> {
        let aabb = region.aabb();
        let lo = voxel_key(&Point::new(aabb.min[0], aabb.min[1], aabb.min[2]), self.resolution);
        let hi = voxel_key(&Point::new(aabb.max[0], aabb.max[1], aabb.max[2]), self.resolution);
        let mut out = BTreeSet::new();
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    let c = crate::geometry::voxel_center([x, y, z], self.resolution);
                    if region.contains(&c, 0.5 * self.resolution)
                        && self.spec.room_bounds.contains(&c, 0.0)
                    {
                        out.insert([x, y, z]);
                    }
                }
            }
        }
        out
    }

    fn applicable(&self, skill: SkillKind, object: usize) -> bool {
        let o = &self.flat[object];
        let phase = self.states[object].phase;
        match skill {
            SkillKind::Open => {
                o.kind == ObjectKind::Container
                    && phase == Phase::Closed
                    && self.flat.iter().any(|h| h.handle_of == Some(object))
            }
            SkillKind::Flip => o.kind == ObjectKind::OpenBox && phase == Phase::Upright,
            SkillKind::Lift => o.kind == ObjectKind::CoveredPile && phase == Phase::Covered,
            SkillKind::Push => o.kind == ObjectKind::MovableBlocker && phase == Phase::InPlace,
            SkillKind::Sit => o.kind == ObjectKind::FurnitureWithUnderspace,
            SkillKind::Collect => o.kind == ObjectKind::Plain && o.handle_of.is_none(),
        }
    }

    /// Executes a skill on an object. Each attempt fails independently with
    /// `skill_failure_prob`; up to `max_retries` retries follow a failure.
    /// Only the target's state or pose and the camera height change.
    pub fn apply_skill<R: Rng>(
        &mut self,
        skill: SkillKind,
        object: usize,
        faults: &FaultProfile,
        rng: &mut R,
    ) -> Result<SkillOutcome, SkillError> {
        if object >= self.flat.len() {
            return Err(SkillError::UnknownObject(object));
        }
        let name = self.flat[object].id.clone();
        if self.states[object].collected
            || self.is_hidden(object)
            || !self.applicable(skill, object)
        {
            return Err(SkillError::Inapplicable {
                skill,
                object: name,
                kind: self.flat[object].kind,
                state: self.states[object].to_string(),
            });
        }
        let distance = self.geometry[object].footprint_distance(self.robot.x, self.robot.y);
        if distance > REACH {
            return Err(SkillError::OutOfReach {
                object: name,
                distance,
            });
        }

        let max_attempts = faults.max_retries + 1;
        let mut attempts = 0;
        let mut succeeded = false;
        while attempts < max_attempts {
            attempts += 1;
            let u: f64 = rng.random();
            if u >= faults.skill_failure_prob {
                succeeded = true;
                break;
            }
        }
        if !succeeded {
            return Ok(SkillOutcome {
                success: false,
                attempts,
                revealed_region: BTreeSet::new(),
                failure_class: Some(SkillFailure::ActionFailure),
                displacement: None,
            });
        }

        let before = self.states[object];
        let before_height = self.camera_height;
        let mut displacement = None;
        let mut region = self.hidden_region(object);
        match skill {
            SkillKind::Open => self.states[object].phase = Phase::Open,
            SkillKind::Flip => self.states[object].phase = Phase::Flipped,
            SkillKind::Lift => self.states[object].phase = Phase::Lifted,
            SkillKind::Push => {
                let g = self.geometry[object];
                let away = Vector::new(g.center[0] - self.robot.x, g.center[1] - self.robot.y, 0.0);
                let lateral = g.lateral();
                let dir = if lateral.dot(&away) < -1e-9 { -lateral } else { lateral };
                let d = dir * PUSH_DISTANCE;
                self.geometry[object] = g.translated(&d);
                self.states[object].phase = Phase::Pushed;
                displacement = Some([d.x, d.y, d.z]);
            }
            SkillKind::Sit => self.camera_height = SITTING_HEIGHT,
            SkillKind::Collect => {
                region = Some(self.geometry[object]);
                self.states[object].collected = true;
            }
        }
        let changed = self.states[object] != before || self.camera_height != before_height;
        let revealed_region = match (changed, region) {
            (true, Some(r)) => self.voxels_in(&r),
            _ => BTreeSet::new(),
        };
        Ok(SkillOutcome {
            success: true,
            attempts,
            revealed_region,
            failure_class: None,
            displacement,
        })
    }
}

/// The five walls of a box whose front (+x) face has been removed.
fn open_shell(g: &OrientedBox) -> Vec<OrientedBox> {
    let h = g.half();
    let t = WALL_THICKNESS.min(h.x).min(h.y).min(h.z);
    let mut out = Vec::with_capacity(5);
    let mut slab = |center: Vector, size: [f64; 3]| {
        let c = g.to_world(&center);
        out.push(OrientedBox::new([c.x, c.y, c.z], size, g.yaw));
    };
    // back
    slab(Vector::new(-h.x + t / 2.0, 0.0, 0.0), [t, 2.0 * h.y, 2.0 * h.z]);
    // sides
    slab(Vector::new(0.0, -h.y + t / 2.0, 0.0), [2.0 * h.x, t, 2.0 * h.z]);
    slab(Vector::new(0.0, h.y - t / 2.0, 0.0), [2.0 * h.x, t, 2.0 * h.z]);
    // bottom and top
    slab(Vector::new(0.0, 0.0, -h.z + t / 2.0), [2.0 * h.x, 2.0 * h.y, t]);
    slab(Vector::new(0.0, 0.0, h.z - t / 2.0), [2.0 * h.x, 2.0 * h.y, t]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::bundled_scene;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world(name: &str) -> WorldState {
        WorldState::new(Arc::new(bundled_scene(name).unwrap()), 0.05)
    }

    fn stand_in_front(w: &mut WorldState, object: usize) {
        let g = *w.geometry(object);
        let p = g.center_point() + g.front() * (0.5 * g.size[0] + 0.55);
        w.robot = Pose2D::new(p.x, p.y, (-g.front().y).atan2(-g.front().x));
    }

    #[test]
    fn open_succeeds_deterministically_without_faults() {
        let mut w = world("open_drawer");
        stand_in_front(&mut w, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = w
            .apply_skill(SkillKind::Open, 0, &FaultProfile::zero(), &mut rng)
            .unwrap();
        assert!(out.success);
        assert_eq!(out.attempts, 1);
        assert_eq!(w.state(0).phase, Phase::Open);
        let toy = w.object_index("toy").unwrap();
        let toy_voxel = voxel_key(&w.geometry(toy).center_point(), 0.05);
        assert!(out.revealed_region.contains(&toy_voxel));
    }

    #[test]
    fn forced_failure_exhausts_retries() {
        let mut w = world("open_drawer");
        stand_in_front(&mut w, 0);
        let faults = FaultProfile {
            skill_failure_prob: 1.0,
            max_retries: 2,
            ..FaultProfile::zero()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = w.apply_skill(SkillKind::Open, 0, &faults, &mut rng).unwrap();
        assert!(!out.success);
        assert_eq!(out.attempts, 3);
        assert_eq!(out.failure_class, Some(SkillFailure::ActionFailure));
        assert!(out.revealed_region.is_empty());
        assert_eq!(w.state(0).phase, Phase::Closed);
    }

    #[test]
    fn inapplicable_and_out_of_reach_are_errors() {
        let mut w = world("lift_cloth");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let far = w.apply_skill(SkillKind::Lift, 0, &FaultProfile::zero(), &mut rng);
        assert!(matches!(far, Err(SkillError::OutOfReach { .. })));
        stand_in_front(&mut w, 0);
        let wrong = w.apply_skill(SkillKind::Open, 0, &FaultProfile::zero(), &mut rng);
        assert!(matches!(wrong, Err(SkillError::Inapplicable { .. })));
        // Hidden objects cannot be acted on.
        let toy = w.object_index("toy").unwrap();
        let hidden = w.apply_skill(SkillKind::Collect, toy, &FaultProfile::zero(), &mut rng);
        assert!(matches!(hidden, Err(SkillError::Inapplicable { .. })));
    }

    #[test]
    fn push_moves_blocker_laterally_and_only_it() {
        let mut w = world("push_box");
        stand_in_front(&mut w, 0);
        let before: Vec<_> = (0..w.objects().len()).map(|i| *w.geometry(i)).collect();
        let states_before = w.states().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = w
            .apply_skill(SkillKind::Push, 0, &FaultProfile::zero(), &mut rng)
            .unwrap();
        let d = out.displacement.unwrap();
        assert!(((d[0].powi(2) + d[1].powi(2)).sqrt() - PUSH_DISTANCE).abs() < 1e-12);
        let shift = w.geometry(0).center_point() - before[0].center_point();
        assert!((shift.norm() - PUSH_DISTANCE).abs() < 1e-12);
        assert!(shift.dot(&before[0].front()).abs() < 1e-12);
        for i in 1..w.objects().len() {
            assert_eq!(*w.geometry(i), before[i]);
            assert_eq!(w.state(i), states_before[i]);
        }
        assert!(!w.is_hidden(w.object_index("toy").unwrap()));
    }

    #[test]
    fn sit_changes_only_camera_height() {
        let mut w = world("check_under");
        stand_in_front(&mut w, 0);
        let ball = w.object_index("ball").unwrap();
        assert!(w.is_hidden(ball));
        let states = w.states().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = w
            .apply_skill(SkillKind::Sit, 0, &FaultProfile::zero(), &mut rng)
            .unwrap();
        assert!(out.success && !out.revealed_region.is_empty());
        assert_eq!(w.states(), &states[..]);
        assert!(w.is_sitting());
        assert!(!w.is_hidden(ball));
    }

    #[test]
    fn occupancy_tracks_states() {
        let mut w = world("open_drawer");
        let toy = w.object_index("toy").unwrap();
        let interior = voxel_key(&w.geometry(toy).center_point(), 0.05);
        assert_eq!(w.occupancy().get(&interior), Some(&0));
        stand_in_front(&mut w, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        w.apply_skill(SkillKind::Open, 0, &FaultProfile::zero(), &mut rng)
            .unwrap();
        assert_eq!(w.occupancy().get(&interior), Some(&toy));
        w.apply_skill(SkillKind::Collect, toy, &FaultProfile::zero(), &mut rng)
            .unwrap();
        assert!(w.occupancy().values().all(|o| *o != toy));
    }

    #[test]
    fn fault_profile_validation() {
        assert!(FaultProfile::zero().validate().is_ok());
        let bad = FaultProfile {
            label_confusion_prob: 1.5,
            ..FaultProfile::zero()
        };
        assert!(bad.validate().is_err());
        let neg = FaultProfile {
            point_jitter_sigma: -0.1,
            ..FaultProfile::zero()
        };
        assert!(neg.validate().is_err());
    }
}
