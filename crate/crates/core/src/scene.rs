//! Ground-truth scene description and its file format.
//!
//! A scene file is JSON with the top-level keys `objects`, `robot_start`,
//! `room_bounds`, `relations` and `task`. Objects nest: a container lists
//! its `handle` and its `contents`; covers, furniture and blockers list the
//! objects they hide in `contents`. Nesting implies the ground-truth
//! relation (`of` for handles, `inside`/`under`/`behind` for contents by
//! parent kind); `relations` adds the rest (typically `on`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, OrientedBox, Point, Pose2D, Vector};

/// Maximum handle-to-face gap, matching the `of` relation rule.
pub const HANDLE_CONTACT_TOLERANCE: f64 = 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate object id `{0}`")]
    DuplicateId(String),
    #[error("relation references unknown object id `{0}`")]
    DanglingReference(String),
    #[error("object `{child}` lies outside the hidden region of `{parent}`")]
    ContentsOutsideHiddenRegion { parent: String, child: String },
    #[error("object `{0}` of kind {1} cannot hold contents")]
    NoHiddenRegion(String, ObjectKind),
    #[error("handle `{handle}` does not touch container `{container}`")]
    HandleDetached { container: String, handle: String },
    #[error("only containers carry handles, `{0}` is not a container")]
    HandleOnNonContainer(String),
    #[error("object `{0}` lies outside the room bounds")]
    OutsideRoom(String),
    #[error("object `{0}` has more than one parent relation")]
    MultipleParents(String),
    #[error("relation from `{0}` to itself")]
    SelfRelation(String),
    #[error("relations form a cycle through `{0}`")]
    Cycle(String),
    #[error("object `{0}` uses unsupported geometry; only oriented boxes are accepted")]
    UnsupportedGeometry(String),
    #[error("object `{id}` of kind {kind} cannot start in state {phase}")]
    InvalidState {
        id: String,
        kind: ObjectKind,
        phase: Phase,
    },
    #[error("object `{0}` has a non-positive size")]
    InvalidSize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Container,
    OpenBox,
    CoveredPile,
    MovableBlocker,
    FurnitureWithUnderspace,
    Plain,
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ObjectKind::Container => "container",
            ObjectKind::OpenBox => "open_box",
            ObjectKind::CoveredPile => "covered_pile",
            ObjectKind::MovableBlocker => "movable_blocker",
            ObjectKind::FurnitureWithUnderspace => "furniture_with_underspace",
            ObjectKind::Plain => "plain",
        };
        f.write_str(s)
    }
}

impl ObjectKind {
    pub fn initial_phase(self) -> Phase {
        match self {
            ObjectKind::Container => Phase::Closed,
            ObjectKind::OpenBox => Phase::Upright,
            ObjectKind::CoveredPile => Phase::Covered,
            ObjectKind::MovableBlocker => Phase::InPlace,
            ObjectKind::FurnitureWithUnderspace | ObjectKind::Plain => Phase::Static,
        }
    }

    pub fn allows_phase(self, phase: Phase) -> bool {
        matches!(
            (self, phase),
            (ObjectKind::Container, Phase::Closed | Phase::Open)
                | (ObjectKind::OpenBox, Phase::Upright | Phase::Flipped)
                | (ObjectKind::CoveredPile, Phase::Covered | Phase::Lifted)
                | (ObjectKind::MovableBlocker, Phase::InPlace | Phase::Pushed)
                | (ObjectKind::FurnitureWithUnderspace | ObjectKind::Plain, Phase::Static)
        )
    }

    /// The exploration skill this kind affords, if any.
    pub fn exploration_skill(self) -> Option<SkillKind> {
        match self {
            ObjectKind::Container => Some(SkillKind::Open),
            ObjectKind::OpenBox => Some(SkillKind::Flip),
            ObjectKind::CoveredPile => Some(SkillKind::Lift),
            ObjectKind::MovableBlocker => Some(SkillKind::Push),
            ObjectKind::FurnitureWithUnderspace => Some(SkillKind::Sit),
            ObjectKind::Plain => None,
        }
    }

    /// Relation between this kind and the objects it hides.
    pub fn contents_relation(self) -> Option<RelationKind> {
        match self {
            ObjectKind::Container | ObjectKind::OpenBox => Some(RelationKind::Inside),
            ObjectKind::CoveredPile | ObjectKind::FurnitureWithUnderspace => {
                Some(RelationKind::Under)
            }
            ObjectKind::MovableBlocker => Some(RelationKind::Behind),
            ObjectKind::Plain => None,
        }
    }
}

/// Per-kind interaction phase. `Static` is the single phase of kinds
/// without an articulation axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Closed,
    Open,
    Upright,
    Flipped,
    Covered,
    Lifted,
    InPlace,
    Pushed,
    #[serde(rename = "none")]
    Static,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Closed => "closed",
            Phase::Open => "open",
            Phase::Upright => "upright",
            Phase::Flipped => "flipped",
            Phase::Covered => "covered",
            Phase::Lifted => "lifted",
            Phase::InPlace => "in_place",
            Phase::Pushed => "pushed",
            Phase::Static => "none",
        };
        f.write_str(s)
    }
}

impl Phase {
    /// Whether this phase exposes the objects the owner hides.
    pub fn reveals_contents(self) -> bool {
        matches!(
            self,
            Phase::Open | Phase::Flipped | Phase::Lifted | Phase::Pushed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionState {
    pub phase: Phase,
    #[serde(default)]
    pub collected: bool,
}

impl InteractionState {
    pub fn new(phase: Phase) -> Self {
        Self {
            phase,
            collected: false,
        }
    }
}

impl fmt::Display for InteractionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.collected {
            f.write_str("collected")
        } else {
            self.phase.fmt(f)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Of,
    On,
    Inside,
    Under,
    Behind,
}

impl RelationKind {
    pub const ALL: [RelationKind; 5] = [
        RelationKind::Of,
        RelationKind::On,
        RelationKind::Inside,
        RelationKind::Under,
        RelationKind::Behind,
    ];
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RelationKind::Of => "of",
            RelationKind::On => "on",
            RelationKind::Inside => "inside",
            RelationKind::Under => "under",
            RelationKind::Behind => "behind",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillKind {
    Open,
    Flip,
    Lift,
    Push,
    Sit,
    Collect,
}

impl SkillKind {
    pub const ALL: [SkillKind; 6] = [
        SkillKind::Open,
        SkillKind::Flip,
        SkillKind::Lift,
        SkillKind::Push,
        SkillKind::Sit,
        SkillKind::Collect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SkillKind::Open => "open",
            SkillKind::Flip => "flip",
            SkillKind::Lift => "lift",
            SkillKind::Push => "push",
            SkillKind::Sit => "sit",
            SkillKind::Collect => "collect",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Relation implied between the acted-on object and anything its
    /// success reveals.
    pub fn revealed_relation(self) -> Option<RelationKind> {
        match self {
            SkillKind::Open | SkillKind::Flip => Some(RelationKind::Inside),
            SkillKind::Lift | SkillKind::Sit => Some(RelationKind::Under),
            SkillKind::Push => Some(RelationKind::Behind),
            SkillKind::Collect => None,
        }
    }
}

impl fmt::Display for SkillKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Explore,
    Collect { targets: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GtRelation {
    pub parent: String,
    pub child: String,
    pub kind: RelationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub id: String,
    pub label: String,
    pub geometry: OrientedBox,
    pub kind: ObjectKind,
    pub state0: InteractionState,
    pub contents: Vec<ObjectSpec>,
    pub handle: Option<Box<ObjectSpec>>,
}

impl ObjectSpec {
    /// Region whose contents stay hidden until the owner is acted on.
    /// `floor_z` is the room floor, which bounds furniture under-space.
    pub fn hidden_region(&self, floor_z: f64) -> Option<OrientedBox> {
        let g = &self.geometry;
        match self.kind {
            ObjectKind::Container | ObjectKind::OpenBox | ObjectKind::CoveredPile => Some(*g),
            ObjectKind::FurnitureWithUnderspace => {
                let height = g.bottom() - floor_z;
                (height > 0.0).then(|| {
                    OrientedBox::new(
                        [g.center[0], g.center[1], floor_z + 0.5 * height],
                        [g.size[0], g.size[1], height],
                        g.yaw,
                    )
                })
            }
            ObjectKind::MovableBlocker => Some(g.translated(&(-g.front() * g.size[0]))),
            ObjectKind::Plain => None,
        }
    }
}

/// Object lifted out of the nesting, with its parent link.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatObject {
    pub index: usize,
    pub id: String,
    pub label: String,
    pub geometry: OrientedBox,
    pub kind: ObjectKind,
    pub state0: InteractionState,
    /// Parent that hides this object (contents), if any.
    pub hider: Option<usize>,
    /// Container this object is the handle of.
    pub handle_of: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    pub robot_start: Pose2D,
    pub room_bounds: Aabb,
    pub gt_relations: Vec<GtRelation>,
    pub task: TaskKind,
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    objects: Vec<RawObject>,
    robot_start: Pose2D,
    room_bounds: Aabb,
    #[serde(default)]
    relations: Vec<GtRelation>,
    #[serde(default)]
    task: TaskKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    id: String,
    label: String,
    kind: ObjectKind,
    geometry: RawGeometry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<Phase>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    collected: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    contents: Vec<RawObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    handle: Option<Box<RawObject>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawGeometry {
    Box(OrientedBox),
    Points {
        #[allow(dead_code)]
        points: Vec<[f64; 3]>,
    },
    Mesh {
        #[allow(dead_code)]
        mesh: serde_json::Value,
    },
}

pub fn parse_scene(text: &str) -> Result<SceneSpec, SceneError> {
    let raw: RawScene = serde_json::from_str(text).map_err(|e| SceneError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let objects = raw
        .objects
        .into_iter()
        .map(convert_object)
        .collect::<Result<Vec<_>, _>>()?;
    let spec = SceneSpec {
        objects,
        robot_start: raw.robot_start,
        room_bounds: raw.room_bounds,
        gt_relations: raw.relations,
        task: raw.task,
    };
    spec.validated()
}

fn convert_object(raw: RawObject) -> Result<ObjectSpec, SceneError> {
    let geometry = match raw.geometry {
        RawGeometry::Box(b) => b,
        _ => return Err(SceneError::UnsupportedGeometry(raw.id)),
    };
    if geometry.size.iter().any(|s| !(*s > 0.0)) {
        return Err(SceneError::InvalidSize(raw.id));
    }
    let phase = raw.state.unwrap_or_else(|| raw.kind.initial_phase());
    if !raw.kind.allows_phase(phase) {
        return Err(SceneError::InvalidState {
            id: raw.id,
            kind: raw.kind,
            phase,
        });
    }
    let contents = raw
        .contents
        .into_iter()
        .map(convert_object)
        .collect::<Result<Vec<_>, _>>()?;
    let handle = raw
        .handle
        .map(|h| convert_object(*h).map(Box::new))
        .transpose()?;
    Ok(ObjectSpec {
        id: raw.id,
        label: raw.label,
        geometry,
        kind: raw.kind,
        state0: InteractionState {
            phase,
            collected: raw.collected,
        },
        contents,
        handle,
    })
}

fn to_raw(obj: &ObjectSpec) -> RawObject {
    RawObject {
        id: obj.id.clone(),
        label: obj.label.clone(),
        kind: obj.kind,
        geometry: RawGeometry::Box(obj.geometry),
        state: (obj.state0.phase != obj.kind.initial_phase()).then_some(obj.state0.phase),
        collected: obj.state0.collected,
        contents: obj.contents.iter().map(to_raw).collect(),
        handle: obj.handle.as_ref().map(|h| Box::new(to_raw(h))),
    }
}

impl SceneSpec {
    /// Serializes to the scene file format.
    pub fn to_json(&self) -> String {
        let raw = RawScene {
            objects: self.objects.iter().map(to_raw).collect(),
            robot_start: self.robot_start,
            room_bounds: self.room_bounds,
            relations: self.gt_relations.clone(),
            task: self.task.clone(),
        };
        serde_json::to_string_pretty(&raw).expect("scene serializes")
    }

    /// Objects in discovery order: each object, then its handle, then its
    /// contents, depth first.
    pub fn flatten(&self) -> Vec<FlatObject> {
        fn walk(
            obj: &ObjectSpec,
            hider: Option<usize>,
            handle_of: Option<usize>,
            out: &mut Vec<FlatObject>,
        ) {
            let index = out.len();
            out.push(FlatObject {
                index,
                id: obj.id.clone(),
                label: obj.label.clone(),
                geometry: obj.geometry,
                kind: obj.kind,
                state0: obj.state0,
                hider,
                handle_of,
            });
            if let Some(h) = &obj.handle {
                walk(h, None, Some(index), out);
            }
            for c in &obj.contents {
                walk(c, Some(index), None, out);
            }
        }
        let mut out = Vec::new();
        for o in &self.objects {
            walk(o, None, None, &mut out);
        }
        out
    }

    pub fn object_count(&self) -> usize {
        self.flatten().len()
    }

    /// Sorted set of object labels in the scene.
    pub fn label_vocabulary(&self) -> Vec<String> {
        self.flatten()
            .into_iter()
            .map(|o| o.label)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Skills an episode must complete, as (skill, flat object index).
    pub fn required_skills(&self) -> Vec<(SkillKind, usize)> {
        let flat = self.flatten();
        let mut out = Vec::new();
        for o in &flat {
            match o.kind {
                ObjectKind::Container => {
                    if flat.iter().any(|h| h.handle_of == Some(o.index)) {
                        out.push((SkillKind::Open, o.index));
                    }
                }
                ObjectKind::Plain => {}
                k => out.push((k.exploration_skill().expect("interactive kind"), o.index)),
            }
        }
        if let TaskKind::Collect { targets } = &self.task {
            for o in &flat {
                if targets.contains(&o.label) {
                    out.push((SkillKind::Collect, o.index));
                }
            }
        }
        out
    }

    fn validated(mut self) -> Result<Self, SceneError> {
        let flat = self.flatten();
        let mut ids = BTreeMap::new();
        for o in &flat {
            if ids.insert(o.id.clone(), o.index).is_some() {
                return Err(SceneError::DuplicateId(o.id.clone()));
            }
        }

        let floor = self.room_bounds.min[2];
        let mut relations: BTreeSet<GtRelation> = BTreeSet::new();
        fn check_nested(
            obj: &ObjectSpec,
            floor: f64,
            rels: &mut BTreeSet<GtRelation>,
        ) -> Result<(), SceneError> {
            if let Some(h) = &obj.handle {
                if obj.kind != ObjectKind::Container {
                    return Err(SceneError::HandleOnNonContainer(obj.id.clone()));
                }
                let gap = h
                    .geometry
                    .surface_samples(0.005)
                    .iter()
                    .map(|(p, _)| obj.geometry.distance_to_point(p))
                    .fold(f64::INFINITY, f64::min);
                if gap >= HANDLE_CONTACT_TOLERANCE {
                    return Err(SceneError::HandleDetached {
                        container: obj.id.clone(),
                        handle: h.id.clone(),
                    });
                }
                rels.insert(GtRelation {
                    parent: obj.id.clone(),
                    child: h.id.clone(),
                    kind: RelationKind::Of,
                });
                check_nested(h, floor, rels)?;
            }
            if !obj.contents.is_empty() {
                let (region, rel) = match (obj.hidden_region(floor), obj.kind.contents_relation())
                {
                    (Some(r), Some(k)) => (r, k),
                    _ => return Err(SceneError::NoHiddenRegion(obj.id.clone(), obj.kind)),
                };
                for c in &obj.contents {
                    if !c.geometry.corners().iter().all(|p| region.contains(p, 1e-6)) {
                        return Err(SceneError::ContentsOutsideHiddenRegion {
                            parent: obj.id.clone(),
                            child: c.id.clone(),
                        });
                    }
                    rels.insert(GtRelation {
                        parent: obj.id.clone(),
                        child: c.id.clone(),
                        kind: rel,
                    });
                    check_nested(c, floor, rels)?;
                }
            }
            Ok(())
        }
        for o in &self.objects {
            check_nested(o, floor, &mut relations)?;
        }

        for o in &flat {
            if !o
                .geometry
                .corners()
                .iter()
                .all(|p| self.room_bounds.contains(p, 1e-6))
            {
                return Err(SceneError::OutsideRoom(o.id.clone()));
            }
        }

        for r in &self.gt_relations {
            for id in [&r.parent, &r.child] {
                if !ids.contains_key(id) {
                    return Err(SceneError::DanglingReference(id.clone()));
                }
            }
            if r.parent == r.child {
                return Err(SceneError::SelfRelation(r.parent.clone()));
            }
            relations.insert(r.clone());
        }

        let mut parent_of: BTreeMap<&str, &str> = BTreeMap::new();
        for r in &relations {
            if parent_of.insert(&r.child, &r.parent).is_some() {
                return Err(SceneError::MultipleParents(r.child.clone()));
            }
        }
        for start in parent_of.keys() {
            let mut cur = *start;
            let mut steps = 0;
            while let Some(p) = parent_of.get(cur) {
                cur = p;
                steps += 1;
                if steps > parent_of.len() {
                    return Err(SceneError::Cycle((*start).to_string()));
                }
            }
        }

        self.gt_relations = relations.into_iter().collect();
        Ok(self)
    }
}

/// Names of the scenes shipped with the crate.
pub const BUNDLED_SCENES: [&str; 5] = [
    "flip_box",
    "open_drawer",
    "check_under",
    "push_box",
    "lift_cloth",
];

/// Raw text of a scene shipped with the crate (the five task scenes plus
/// `household`).
pub fn bundled_scene_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "flip_box" => include_str!("../scenes/flip_box.json"),
        "open_drawer" => include_str!("../scenes/open_drawer.json"),
        "check_under" => include_str!("../scenes/check_under.json"),
        "push_box" => include_str!("../scenes/push_box.json"),
        "lift_cloth" => include_str!("../scenes/lift_cloth.json"),
        "household" => include_str!("../scenes/household.json"),
        _ => return None,
    })
}

pub fn bundled_scene(name: &str) -> Option<SceneSpec> {
    bundled_scene_text(name).map(|t| parse_scene(t).expect("bundled scenes are valid"))
}

/// Point on the room floor at the center of the bounds.
pub fn room_center(bounds: &Aabb) -> Point {
    let c = bounds.center();
    Point::new(c.x, c.y, bounds.min[2])
}

/// Unit planar direction from `from` toward `to`; +x when they coincide.
pub fn planar_direction(from: &Point, to: &Point) -> Vector {
    let d = Vector::new(to.x - from.x, to.y - from.y, 0.0);
    let n = d.norm();
    if n < 1e-9 {
        Vector::new(1.0, 0.0, 0.0)
    } else {
        d / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "objects": [{"id": "box", "label": "box", "kind": "plain",
                     "geometry": {"center": [0.0, 0.0, 0.1], "size": [0.2, 0.2, 0.2]}}],
        "robot_start": {"x": 0.0, "y": -1.0, "yaw": 1.57},
        "room_bounds": {"min": [-1.5, -2.0, 0.0], "max": [1.5, 2.0, 2.5]}
    }"#;

    pub(crate) const CABINET: &str = r#"{
        "objects": [{
            "id": "cabinet", "label": "cabinet", "kind": "container",
            "geometry": {"center": [0.0, 0.0, 0.3], "size": [0.4, 0.5, 0.6], "yaw": 0.0},
            "handle": {"id": "handle", "label": "handle", "kind": "plain",
                       "geometry": {"center": [0.21, 0.0, 0.45], "size": [0.02, 0.12, 0.02]}},
            "contents": [{"id": "toy", "label": "toy", "kind": "plain",
                          "geometry": {"center": [0.0, 0.0, 0.1], "size": [0.1, 0.1, 0.1]}}]
        }],
        "robot_start": {"x": 0.0, "y": -1.0, "yaw": 1.57},
        "room_bounds": {"min": [-1.5, -2.0, 0.0], "max": [1.5, 2.0, 2.5]},
        "task": {"kind": "explore"}
    }"#;

    #[test]
    fn minimal_scene_parses() {
        let s = parse_scene(MINIMAL).unwrap();
        assert_eq!(s.objects.len(), 1);
        assert_eq!(s.task, TaskKind::Explore);
        assert!(s.gt_relations.is_empty());
        assert_eq!(s.objects[0].state0, InteractionState::new(Phase::Static));
    }

    #[test]
    fn cabinet_scene_derives_nested_relations() {
        let s = parse_scene(CABINET).unwrap();
        let cab = &s.objects[0];
        assert_eq!(cab.id, "cabinet");
        assert_eq!(cab.kind, ObjectKind::Container);
        assert_eq!(cab.state0.phase, Phase::Closed);
        assert_eq!(cab.handle.as_ref().unwrap().id, "handle");
        assert_eq!(cab.contents.len(), 1);
        assert_eq!(cab.contents[0].geometry.size, [0.1, 0.1, 0.1]);
        assert_eq!(
            s.gt_relations,
            vec![
                GtRelation {
                    parent: "cabinet".into(),
                    child: "handle".into(),
                    kind: RelationKind::Of
                },
                GtRelation {
                    parent: "cabinet".into(),
                    child: "toy".into(),
                    kind: RelationKind::Inside
                },
            ]
        );
        assert_eq!(s.required_skills(), vec![(SkillKind::Open, 0)]);
    }

    #[test]
    fn dangling_relation_is_rejected() {
        let text = MINIMAL.replace(
            "\"room_bounds\"",
            "\"relations\": [{\"parent\": \"ghost\", \"child\": \"box\", \"kind\": \"on\"}], \"room_bounds\"",
        );
        assert_eq!(
            parse_scene(&text),
            Err(SceneError::DanglingReference("ghost".into()))
        );
    }

    #[test]
    fn syntax_error_reports_position() {
        match parse_scene("{\n  \"objects\": [,]\n}") {
            Err(SceneError::Syntax { line, column, .. }) => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = CABINET.replace("\"id\": \"toy\"", "\"id\": \"handle\"");
        assert_eq!(
            parse_scene(&text),
            Err(SceneError::DuplicateId("handle".into()))
        );
    }

    #[test]
    fn contents_outside_hidden_region_are_rejected() {
        let text = CABINET.replace("[0.0, 0.0, 0.1], \"size\": [0.1", "[0.6, 0.0, 0.1], \"size\": [0.1");
        assert!(matches!(
            parse_scene(&text),
            Err(SceneError::ContentsOutsideHiddenRegion { .. })
        ));
    }

    #[test]
    fn detached_handle_is_rejected() {
        let text = CABINET.replace("[0.21, 0.0, 0.45]", "[0.3, 0.0, 0.45]");
        assert!(matches!(
            parse_scene(&text),
            Err(SceneError::HandleDetached { .. })
        ));
    }

    #[test]
    fn point_set_geometry_is_rejected() {
        let text = MINIMAL.replace(
            "{\"center\": [0.0, 0.0, 0.1], \"size\": [0.2, 0.2, 0.2]}",
            "{\"points\": [[0.0, 0.0, 0.0]]}",
        );
        assert_eq!(
            parse_scene(&text),
            Err(SceneError::UnsupportedGeometry("box".into()))
        );
    }

    #[test]
    fn second_parent_is_rejected() {
        let text = CABINET.replace(
            "\"task\"",
            "\"relations\": [{\"parent\": \"handle\", \"child\": \"toy\", \"kind\": \"on\"}], \"task\"",
        );
        assert_eq!(
            parse_scene(&text),
            Err(SceneError::MultipleParents("toy".into()))
        );
    }

    #[test]
    fn cycle_is_rejected() {
        let text = MINIMAL
            .replace(
                "\"objects\": [",
                "\"objects\": [{\"id\": \"b2\", \"label\": \"b\", \"kind\": \"plain\", \"geometry\": {\"center\": [0.5, 0.0, 0.1], \"size\": [0.2, 0.2, 0.2]}},",
            )
            .replace(
                "\"room_bounds\"",
                "\"relations\": [{\"parent\": \"box\", \"child\": \"b2\", \"kind\": \"on\"}, {\"parent\": \"b2\", \"child\": \"box\", \"kind\": \"behind\"}], \"room_bounds\"",
            );
        assert!(matches!(parse_scene(&text), Err(SceneError::Cycle(_))));
    }

    #[test]
    fn bundled_scenes_parse_and_round_trip() {
        for name in BUNDLED_SCENES.iter().chain(["household"].iter()) {
            let s = bundled_scene(name).unwrap();
            let again = parse_scene(&s.to_json()).unwrap();
            assert_eq!(s, again, "{name}");
        }
    }
}
