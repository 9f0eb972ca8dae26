//! Closed-loop episodes: observe, build the graph, plan, act.

pub mod batch;
pub mod log;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{
    associate, association_matrix, fuse_node, AssociationMatrix, infer_relations, new_node, ActionFeedback,
    BuilderConfig,
};
use crate::detector::{detect, Detection, DetectorRng};
use crate::geometry::{centroid, voxel_center, wrap_angle, Aabb, CameraPose, Point, Pose2D, Vector};
use crate::graph::{NodeId, ObjectGraph, ObjectNode, ROOT_ID};
use crate::metrics::{
    classify_episode, episode_success, graph_edit_distance, match_nodes, object_recovery, Defect,
    FailureClass,
};
use crate::planner::{plan_next_llm, PromptConfig, PromptError, Transport};
use crate::planner::{
    plan_next_rule, serialize_graph, HistoryEntry, PlanContext, PlannerDecision, SCAN_WAYPOINTS,
};
use crate::scene::{room_center, ObjectKind, Phase, RelationKind, SceneSpec, SkillKind};
use crate::semantics::kind_for_label;
use crate::world::ROBOT_RADIUS;
use crate::world::{
    FaultProfile, KnownSpaceGrid, Observation, SkillCommand, SkillError, WorldError, WorldState,
    DEFAULT_RAY_BUDGET, FOV_H, FOV_V,
};
use crate::world::ray_grid;

pub use log::{DetectionSummary, EpisodeLog, EpisodeMetrics, LogError, LogEvent};

/// Largest distance from a node centroid to the body a skill is aimed at.
pub const TARGET_DISTANCE: f64 = 0.15;
/// Scan waypoints lie on an ellipse at this fraction of the room half-extents.
const WAYPOINT_SCALE: f64 = 0.75;
/// Clearance between an object's footprint and the approach pose.
const APPROACH_MARGIN: f64 = 0.45;
/// Clearance between an object's footprint and the pose it is inspected
/// from after a skill.
const INSPECT_MARGIN: f64 = 1.0;
/// Largest centroid offset between an acted-on node and its detection in
/// the following view.
const ANCHOR_DISTANCE: f64 = 0.5;
/// Detections within this many ray spacings of the image edge are cut
/// off by it and are not used.
const BORDER_RAYS: f64 = 2.0;
/// Horizontal reach of the shadow searched behind a blocker.
const SHADOW_REACH: f64 = 0.4;

const SKILL_STREAM: u64 = 4;
const POSE_STREAM: u64 = 5;
const START_STREAM: u64 = 6;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("the llm planner needs a transport")]
    MissingTransport,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlannerKind {
    Rule,
    Llm { examples: usize },
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlannerKind::Rule => f.write_str("rule"),
            PlannerKind::Llm { examples } => write!(f, "llm-{examples}ex"),
        }
    }
}

impl FromStr for PlannerKind {
    type Err = String;

    /// Accepts `rule`, `llm` (all bundled examples) and `llm-Nex`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rule" => Ok(PlannerKind::Rule),
            "llm" => Ok(PlannerKind::Llm {
                examples: crate::planner::MAX_EXAMPLES,
            }),
            _ => s
                .strip_prefix("llm-")
                .and_then(|r| r.strip_suffix("ex"))
                .and_then(|n| n.parse().ok())
                .map(|examples| PlannerKind::Llm { examples })
                .ok_or_else(|| format!("unknown planner `{s}`")),
        }
    }
}

/// Faults forced at fixed points of an episode, on top of the random ones
/// in the `FaultProfile`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptedFault {
    /// Every detection labelled `from` is reported as `to`.
    Relabel { from: String, to: String },
    /// Every attempt of this skill fails.
    FailSkill { skill: SkillKind },
    /// The planner's output at `step` is replaced.
    ForceDecision {
        step: usize,
        decision: PlannerDecision,
    },
}

impl ScriptedFault {
    pub fn category(&self) -> FailureClass {
        match self {
            ScriptedFault::Relabel { .. } => FailureClass::Perception,
            ScriptedFault::FailSkill { .. } => FailureClass::Action,
            ScriptedFault::ForceDecision { .. } => FailureClass::Decision,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scene_name: String,
    pub scene: Arc<SceneSpec>,
    pub seed: u64,
    pub planner: PlannerKind,
    pub faults: FaultProfile,
    pub scripted: Vec<ScriptedFault>,
    pub builder: BuilderConfig,
    pub ray_budget: usize,
    pub max_steps: usize,
    /// Start from a random free pose instead of the scene's start pose.
    pub randomize_start: bool,
    pub frontier_threshold: f64,
}

impl RunConfig {
    pub fn new(scene_name: impl Into<String>, scene: Arc<SceneSpec>) -> Self {
        Self {
            scene_name: scene_name.into(),
            scene,
            seed: 0,
            planner: PlannerKind::Rule,
            faults: FaultProfile::zero(),
            scripted: Vec::new(),
            builder: BuilderConfig::default(),
            ray_budget: DEFAULT_RAY_BUDGET,
            max_steps: 200,
            randomize_start: false,
            frontier_threshold: 0.0,
        }
    }

    /// Configuration for a scene shipped with the crate.
    pub fn bundled(name: &str) -> Option<Self> {
        crate::scene::bundled_scene(name).map(|s| Self::new(name, Arc::new(s)))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.max_steps == 0 {
            return Err(HarnessError::Config("max steps must be positive".into()));
        }
        if self.ray_budget == 0 {
            return Err(HarnessError::Config("ray budget must be positive".into()));
        }
        if !(self.builder.resolution > 0.0) {
            return Err(HarnessError::Config("voxel resolution must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.builder.tau) {
            return Err(HarnessError::Config("tau must lie in [0, 1]".into()));
        }
        self.faults.validate().map_err(HarnessError::Config)
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub metrics: EpisodeMetrics,
    pub graph: ObjectGraph,
    pub defects: Vec<Defect>,
    pub log: EpisodeLog,
}

/// Moves every point of a node by `d`.
pub fn shift_node(node: &mut ObjectNode, d: &[f64; 3]) {
    let v = Vector::new(d[0], d[1], d[2]);
    for p in &mut node.points {
        *p += v;
    }
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Graph building state: the object graph, the known-space grid and the
/// noise streams that feed them.
pub struct Perceiver {
    pub graph: ObjectGraph,
    pub known: KnownSpaceGrid,
    pub feedback: Vec<ActionFeedback>,
    pub cfg: BuilderConfig,
    /// Node acted on by the last successful skill; the next view's
    /// detection of it is fused into it whatever its score.
    pub anchor: Option<NodeId>,
    /// Per node, how many detections of each true object it absorbed.
    /// Evaluation only.
    sources: BTreeMap<NodeId, BTreeMap<usize, usize>>,
    detector_rng: DetectorRng,
    pose_rng: ChaCha8Rng,
    labels: Vec<String>,
    vocabulary: Vec<String>,
}

impl Perceiver {
    pub fn new(world: &WorldState, cfg: BuilderConfig, seed: u64) -> Self {
        Self {
            graph: ObjectGraph::new(),
            known: KnownSpaceGrid::new(&world.spec().room_bounds, cfg.resolution),
            feedback: Vec::new(),
            cfg,
            anchor: None,
            sources: BTreeMap::new(),
            detector_rng: DetectorRng::new(seed),
            pose_rng: seeded(seed, POSE_STREAM),
            labels: world.objects().iter().map(|o| o.label.clone()).collect(),
            vocabulary: world.spec().label_vocabulary(),
        }
    }

    /// Object a node mostly observed.
    pub fn dominant_source(&self, id: NodeId) -> Option<usize> {
        self.sources
            .get(&id)?
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&o, _)| o)
    }

    /// Detection of the anchored node's label that best matches it: highest
    /// score, then nearest centroid within `ANCHOR_DISTANCE`.
    fn anchor_row(&self, id: NodeId, dets: &[Detection], matrix: &AssociationMatrix) -> Option<usize> {
        let node = self.graph.node(id)?;
        let c = node.centroid()?;
        let col = matrix.node_ids.iter().position(|&n| n == id)?;
        dets.iter()
            .enumerate()
            .filter(|(_, d)| d.label == node.label)
            .filter_map(|(i, d)| {
                let dc = centroid(&d.points)?;
                let dist = (dc - c).norm();
                (dist <= ANCHOR_DISTANCE).then_some((i, matrix.values[i][col], dist))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.total_cmp(&a.2)))
            .map(|(i, _, _)| i)
    }

    /// Renders the current view and folds it into the graph.
    pub fn observe(
        &mut self,
        world: &WorldState,
        faults: &FaultProfile,
        scripted: &[ScriptedFault],
        ray_budget: usize,
        step: usize,
        log: &mut EpisodeLog,
    ) -> Result<Observation, WorldError> {
        let mut obs = world.render_observation(&world.camera_pose(), ray_budget)?;
        let noise: [f64; 3] = std::array::from_fn(|_| {
            let z: f64 = StandardNormal.sample(&mut self.pose_rng);
            z * faults.pose_noise_sigma
        });
        if faults.pose_noise_sigma > 0.0 {
            let d = Vector::from(noise);
            for p in &mut obs.points {
                p.position += d;
            }
            let o = obs.origin() + d;
            obs.camera.position = [o.x, o.y, o.z];
            log.push(LogEvent::Fault {
                step,
                kind: "pose_noise".into(),
                detail: format!("{:.4} {:.4} {:.4}", d.x, d.y, d.z),
            });
        }
        self.known.update(&obs);
        log.push(LogEvent::Observation {
            step,
            camera: obs.camera,
            points: obs.points.len(),
            free_rays: obs.free_rays.len(),
            unknown_fraction: self.known.unknown_fraction(),
        });

        let mut dets = detect(
            &obs,
            &self.labels,
            &self.vocabulary,
            faults,
            &mut self.detector_rng,
        );
        dets.retain(|d| {
            let cut = is_truncated(&obs.camera, &d.points, ray_budget);
            if cut {
                log.push(LogEvent::Truncated {
                    step,
                    label: d.label.clone(),
                    points: d.points.len(),
                });
            }
            !cut
        });
        for d in &mut dets {
            if d.label != self.labels[d.source] {
                log.push(LogEvent::Fault {
                    step,
                    kind: "label_confusion".into(),
                    detail: format!("{} reported as {}", self.labels[d.source], d.label),
                });
            }
            for f in scripted {
                if let ScriptedFault::Relabel { from, to } = f {
                    if &d.label == from {
                        log.push(LogEvent::Fault {
                            step,
                            kind: "scripted_relabel".into(),
                            detail: format!("{from} reported as {to}"),
                        });
                        d.label = to.clone();
                    }
                }
            }
        }
        let res = self.cfg.resolution;
        let mut matrix = association_matrix(&dets, &self.graph, res);
        if let Some(id) = self.anchor.take() {
            if let Some(row) = self.anchor_row(id, &dets, &matrix) {
                let col = matrix.node_ids.iter().position(|&n| n == id).expect("node has a column");
                log.push(LogEvent::Anchored {
                    step,
                    id,
                    score: matrix.values[row][col],
                });
                matrix.values[row][col] = 1.0;
            }
        }
        let update = associate(&matrix, self.cfg.tau);
        log.push(LogEvent::Detections {
            step,
            detections: dets
                .iter()
                .zip(&matrix.values)
                .map(|(d, row)| DetectionSummary {
                    label: d.label.clone(),
                    points: d.points.len(),
                    source: d.source,
                    best_score: row.iter().copied().fold(0.0, f64::max),
                })
                .collect(),
        });
        for &(row, id) in &update.matched {
            let node = self.graph.node_mut(id).expect("matched node exists");
            let delta = fuse_node(node, &dets[row].points, res);
            if !delta.is_empty() {
                log.push(LogEvent::NodeFused { step, id, delta });
            }
            *self
                .sources
                .entry(id)
                .or_default()
                .entry(dets[row].source)
                .or_default() += 1;
        }
        let mut fresh = Vec::new();
        for &row in &update.new_nodes {
            let id = self.graph.next_id();
            let node = new_node(id, &dets[row], res);
            log.push(LogEvent::NodeAdded {
                step,
                id,
                label: node.label.clone(),
                state: node.state,
                skills: node.grounded_skills.clone(),
                points: node.points.clone(),
            });
            self.graph.insert_node(node).expect("fresh node id");
            self.sources
                .entry(id)
                .or_default()
                .insert(dets[row].source, 1);
            fresh.push(id);
        }
        let edges = infer_relations(
            &mut self.graph,
            &fresh,
            &self.feedback,
            Some(&obs.origin()),
            &self.cfg.relations,
        );
        for edge in edges {
            log.push(LogEvent::EdgeAdded { step, edge });
        }
        Ok(obs)
    }
}

/// Whether a detection reaches the edge of the image, within
/// `BORDER_RAYS` ray spacings.
pub fn is_truncated(camera: &CameraPose, points: &[Point], ray_budget: usize) -> bool {
    let (rows, cols) = ray_grid(ray_budget);
    let (forward, right, up) = camera.frame();
    let o = camera.origin();
    let umax = (FOV_H / 2.0).tan() * (1.0 - 2.0 * BORDER_RAYS / cols as f64);
    let vmax = (FOV_V / 2.0).tan() * (1.0 - 2.0 * BORDER_RAYS / rows as f64);
    points.iter().any(|p| {
        let d = p - o;
        let z = d.dot(&forward);
        z <= 0.0 || (d.dot(&right) / z).abs() > umax || (d.dot(&up) / z).abs() > vmax
    })
}

/// Pose on the scan ellipse, facing the room center. Blocked poses slide
/// inward.
pub fn waypoint_pose(world: &WorldState, k: usize) -> Pose2D {
    ring_pose(world, k, SCAN_WAYPOINTS)
}

/// Pose `k` of `n` evenly spaced counter-clockwise on the scan ellipse.
pub fn ring_pose(world: &WorldState, k: usize, n: usize) -> Pose2D {
    let b = &world.spec().room_bounds;
    let c = room_center(b);
    let theta = std::f64::consts::TAU * (k % n) as f64 / n as f64;
    let (hx, hy) = (0.5 * b.extent(0), 0.5 * b.extent(1));
    let mut scale = WAYPOINT_SCALE;
    loop {
        let x = c.x + scale * hx * theta.cos();
        let y = c.y + scale * hy * theta.sin();
        if world.is_free(x, y) || scale <= 0.0 {
            return Pose2D::new(x, y, (c.y - y).atan2(c.x - x));
        }
        scale = (scale - 0.05 / hx.min(hy)).max(0.0);
    }
}

/// Free pose facing a node from the room-center side, at a distance
/// from its centroid that clears its footprint.
pub fn approach_pose(world: &WorldState, node: &ObjectNode) -> Option<Pose2D> {
    facing_pose(world, node, APPROACH_MARGIN)
}

/// Like `approach_pose`, further back so the whole object is in view.
pub fn inspection_pose(world: &WorldState, node: &ObjectNode) -> Option<Pose2D> {
    facing_pose(world, node, INSPECT_MARGIN)
}

fn facing_pose(world: &WorldState, node: &ObjectNode, margin: f64) -> Option<Pose2D> {
    let c = node.centroid()?;
    let bb = Aabb::from_points(&node.points)?;
    let half_diag = 0.5 * (bb.extent(0).powi(2) + bb.extent(1).powi(2)).sqrt();
    let radius = half_diag + margin;
    let toward = crate::scene::planar_direction(&c, &room_center(&world.spec().room_bounds));
    let base = toward.y.atan2(toward.x);
    let step = 15f64.to_radians();
    (0..=12).flat_map(|i| {
        let i = i as f64;
        if i == 0.0 { vec![0.0] } else { vec![i * step, -i * step] }
    })
    .map(|off| {
        let a = base + off;
        let x = c.x + radius * a.cos();
        let y = c.y + radius * a.sin();
        Pose2D::new(x, y, wrap_angle(a + std::f64::consts::PI))
    })
    .find(|p| world.is_free(p.x, p.y))
}

fn random_start(world: &WorldState, seed: u64) -> Pose2D {
    use rand::Rng;
    let mut rng = seeded(seed, START_STREAM);
    let b = world.spec().room_bounds;
    for _ in 0..1000 {
        let x = rng.random_range(b.min[0] + ROBOT_RADIUS..b.max[0] - ROBOT_RADIUS);
        let y = rng.random_range(b.min[1] + ROBOT_RADIUS..b.max[1] - ROBOT_RADIUS);
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        if world.is_free(x, y) {
            return Pose2D::new(x, y, yaw);
        }
    }
    world.spec().robot_start
}

fn phase_after(skill: SkillKind) -> Option<Phase> {
    match skill {
        SkillKind::Open => Some(Phase::Open),
        SkillKind::Flip => Some(Phase::Flipped),
        SkillKind::Lift => Some(Phase::Lifted),
        SkillKind::Push => Some(Phase::Pushed),
        SkillKind::Sit | SkillKind::Collect => None,
    }
}

/// Shadow of a blocker node: its bounds grown horizontally, minus itself.
fn shadow_unknown(known: &KnownSpaceGrid, node: &ObjectNode) -> usize {
    let Some(bb) = Aabb::from_points(&node.points) else {
        return 0;
    };
    let grown = Aabb::new(
        [bb.min[0] - SHADOW_REACH, bb.min[1] - SHADOW_REACH, bb.min[2]],
        [bb.max[0] + SHADOW_REACH, bb.max[1] + SHADOW_REACH, bb.max[2]],
    );
    known.unknown_in(&grown).saturating_sub(known.unknown_in(&bb))
}

/// Scene facts the defect checks compare the graph against.
struct Truth {
    labels: Vec<String>,
    ids: Vec<String>,
    /// Explicit parent of each object: (parent object, relation).
    parent: BTreeMap<usize, (usize, RelationKind)>,
    handle_of: BTreeMap<usize, usize>,
}

impl Truth {
    fn new(world: &WorldState) -> Self {
        let idx = |id: &str| world.object_index(id).expect("relation names an object");
        Self {
            labels: world.objects().iter().map(|o| o.label.clone()).collect(),
            ids: world.objects().iter().map(|o| o.id.clone()).collect(),
            parent: world
                .spec()
                .gt_relations
                .iter()
                .map(|r| (idx(&r.child), (idx(&r.parent), r.kind)))
                .collect(),
            handle_of: world
                .objects()
                .iter()
                .filter_map(|o| o.handle_of.map(|c| (c, o.index)))
                .collect(),
        }
    }
}

/// Wrong or duplicate nodes and wrong relations present when planning.
fn perception_defects(p: &Perceiver, truth: &Truth, step: usize) -> Vec<(String, Defect)> {
    let mut out = Vec::new();
    let mut push = |key: String, detail: String| {
        out.push((
            key,
            Defect {
                step,
                class: FailureClass::Perception,
                detail,
            },
        ))
    };
    let mut seen: BTreeMap<usize, NodeId> = BTreeMap::new();
    for (&id, node) in &p.graph.nodes {
        let Some(src) = p.dominant_source(id) else {
            continue;
        };
        if node.label != truth.labels[src] {
            push(
                format!("label {id}"),
                format!(
                    "node {id} is labelled {} but shows {}",
                    node.label, truth.ids[src]
                ),
            );
        }
        if let Some(&first) = seen.get(&src) {
            push(
                format!("duplicate {id}"),
                format!("nodes {first} and {id} both show {}", truth.ids[src]),
            );
        } else {
            seen.insert(src, id);
        }
    }
    for e in &p.graph.edges {
        let (Some(c), Some(par)) = (p.dominant_source(e.child), p.dominant_source(e.parent)) else {
            continue;
        };
        if truth.parent.get(&c) != Some(&(par, e.kind)) {
            push(
                format!("edge {} {}", e.parent, e.child),
                format!(
                    "edge {} {} {} does not hold between {} and {}",
                    e.child, e.kind, e.parent, truth.ids[c], truth.ids[par]
                ),
            );
        }
    }
    out
}

/// Why an episode without recorded defects fell short.
fn end_attribution(
    p: &Perceiver,
    truth: &Truth,
    required: &[(SkillKind, usize)],
    succeeded: &BTreeSet<(SkillKind, usize)>,
) -> FailureClass {
    let node_of = |obj: usize| {
        p.graph
            .nodes
            .keys()
            .copied()
            .find(|&id| p.dominant_source(id) == Some(obj))
    };
    for &(skill, obj) in required {
        if succeeded.contains(&(skill, obj)) {
            continue;
        }
        let Some(node) = node_of(obj) else {
            return FailureClass::Perception;
        };
        if skill == SkillKind::Open {
            let linked = truth.handle_of.get(&obj).and_then(|&h| node_of(h)).is_some_and(|h| {
                p.graph.parent(h) == Some(node)
                    && p.graph.relation_to_parent(h) == Some(RelationKind::Of)
            });
            if !linked {
                return FailureClass::Perception;
            }
        }
    }
    FailureClass::Decision
}

/// Runs one episode. The llm planner reads replies from `transport`.
pub fn run_episode(
    cfg: &RunConfig,
    transport: Option<&mut dyn Transport>,
) -> Result<EpisodeResult, HarnessError> {
    cfg.validate()?;
    let prompt = match cfg.planner {
        PlannerKind::Rule => None,
        PlannerKind::Llm { examples } => Some(PromptConfig::bundled(examples)?),
    };
    let mut transport = transport;
    if prompt.is_some() && transport.is_none() {
        return Err(HarnessError::MissingTransport);
    }

    let mut world = WorldState::new(cfg.scene.clone(), cfg.builder.resolution);
    if cfg.randomize_start {
        world.robot = random_start(&world, cfg.seed);
    }
    let mut perceiver = Perceiver::new(&world, cfg.builder.clone(), cfg.seed);
    let mut skill_rng = seeded(cfg.seed, SKILL_STREAM);
    let truth = Truth::new(&world);
    let required = world.spec().required_skills();
    let required_set: BTreeSet<(SkillKind, usize)> = required.iter().copied().collect();

    let mut log = EpisodeLog::default();
    log.push(LogEvent::Header {
        scene: cfg.scene_name.clone(),
        seed: cfg.seed,
        planner: cfg.planner.to_string(),
        prompt_examples: prompt.as_ref().map(|p| p.examples.len()),
        faults: cfg.faults.clone(),
        tau: cfg.builder.tau,
        resolution: cfg.builder.resolution,
        ray_budget: cfg.ray_budget,
        max_steps: cfg.max_steps,
        start: world.robot,
    });
    for f in &cfg.scripted {
        log.push(LogEvent::Fault {
            step: 0,
            kind: format!("scripted_{}", f.category()),
            detail: serde_json::to_string(f).expect("faults serialize"),
        });
    }

    let mut defects: Vec<Defect> = Vec::new();
    let mut defect_keys: BTreeSet<String> = BTreeSet::new();
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut succeeded: BTreeSet<(SkillKind, usize)> = BTreeSet::new();
    let mut steps = 0;
    let mut done = false;

    let record = |log: &mut EpisodeLog, defects: &mut Vec<Defect>, d: Defect| {
        log.push(LogEvent::Defect { defect: d.clone() });
        defects.push(d);
    };

    while steps < cfg.max_steps {
        perceiver.observe(
            &world,
            &cfg.faults,
            &cfg.scripted,
            cfg.ray_budget,
            steps,
            &mut log,
        )?;
        let ser = serialize_graph(&perceiver.graph);
        log.push(LogEvent::Snapshot {
            step: steps,
            text: ser.text(),
        });
        for (key, d) in perception_defects(&perceiver, &truth, steps) {
            if defect_keys.insert(key) {
                record(&mut log, &mut defects, d);
            }
        }

        let (mut decision, reply, failure) = match (&prompt, transport.as_deref_mut()) {
            (Some(prompt), Some(t)) => {
                let d = plan_next_llm(&ser, &history, prompt, t);
                (d.decision, d.reply, d.failure)
            }
            _ => {
                let ctx = PlanContext {
                    task: world.spec().task.clone(),
                    unknown_fraction: perceiver.known.unknown_fraction(),
                    frontier_threshold: cfg.frontier_threshold,
                    blockers_with_unknown: perceiver
                        .graph
                        .nodes
                        .values()
                        .filter(|n| kind_for_label(&n.label) == ObjectKind::MovableBlocker)
                        .filter(|n| shadow_unknown(&perceiver.known, n) > 0)
                        .map(|n| n.node_id)
                        .collect(),
                    waypoints: SCAN_WAYPOINTS,
                };
                (plan_next_rule(&ser, &history, &ctx), None, None)
            }
        };
        for f in &cfg.scripted {
            if let ScriptedFault::ForceDecision { step, decision: d } = f {
                if *step == steps {
                    log.push(LogEvent::Fault {
                        step: steps,
                        kind: "scripted_decision".into(),
                        detail: format!("{decision:?} replaced by {d:?}"),
                    });
                    decision = *d;
                }
            }
        }
        log.push(LogEvent::Decision {
            step: steps,
            decision,
            reply,
            failure: failure.clone(),
        });
        if let Some(f) = failure {
            record(
                &mut log,
                &mut defects,
                Defect {
                    step: steps,
                    class: FailureClass::Decision,
                    detail: f,
                },
            );
        }

        match decision {
            PlannerDecision::Done => {
                let scanned: BTreeSet<usize> = history
                    .iter()
                    .filter_map(|h| match h {
                        HistoryEntry::Scan { waypoint } => Some(*waypoint),
                        HistoryEntry::Skill { .. } => None,
                    })
                    .collect();
                if !episode_success(&required, &succeeded) && scanned.len() < SCAN_WAYPOINTS {
                    record(
                        &mut log,
                        &mut defects,
                        Defect {
                            step: steps,
                            class: FailureClass::Decision,
                            detail: format!(
                                "stopped with the task open after {} of {SCAN_WAYPOINTS} waypoints",
                                scanned.len()
                            ),
                        },
                    );
                }
                done = true;
                break;
            }
            PlannerDecision::Scan(k) => {
                let goal = waypoint_pose(&world, k);
                let nav = world.navigate(goal);
                log.push(LogEvent::Navigation {
                    step: steps,
                    goal,
                    path_length: nav.as_ref().ok().map(|r| r.path_length),
                    error: nav.err().map(|e| e.to_string()),
                });
                history.push(HistoryEntry::Scan { waypoint: k });
            }
            PlannerDecision::Skill(cmd) => {
                let ok = act(
                    &mut world,
                    &mut perceiver,
                    cmd,
                    cfg,
                    &required_set,
                    &mut skill_rng,
                    steps,
                    &mut log,
                    &mut |log, d| record(log, &mut defects, d),
                );
                if let Some(obj) = ok {
                    succeeded.insert((cmd.skill, obj));
                }
                history.push(HistoryEntry::Skill {
                    command: cmd,
                    success: ok.is_some(),
                });
            }
        }
        steps += 1;
    }
    let timed_out = !done;
    if timed_out {
        log.push(LogEvent::Timeout { step: steps });
        perceiver.observe(
            &world,
            &cfg.faults,
            &cfg.scripted,
            cfg.ray_budget,
            steps,
            &mut log,
        )?;
    }

    let gt = world.current_ground_truth();
    let report = match_nodes(&perceiver.graph, &gt);
    let ged = graph_edit_distance(&perceiver.graph, &gt);
    let success = !timed_out && episode_success(&required, &succeeded);
    let attribution = (!success).then(|| {
        if timed_out && defects.is_empty() {
            FailureClass::Decision
        } else {
            end_attribution(&perceiver, &truth, &required, &succeeded)
        }
    });
    let metrics = EpisodeMetrics {
        scene: cfg.scene_name.clone(),
        seed: cfg.seed,
        planner: cfg.planner.to_string(),
        success,
        object_recovery: object_recovery(&report),
        ged: ged.cost,
        ged_mode: ged.mode,
        unknown_fraction: perceiver.known.unknown_fraction(),
        steps,
        failure_class: classify_episode(success, &defects, attribution),
        timed_out,
    };
    log.push(LogEvent::Final {
        metrics: metrics.clone(),
        graph: serialize_graph(&perceiver.graph).text(),
    });
    Ok(EpisodeResult {
        metrics,
        graph: perceiver.graph,
        defects,
        log,
    })
}

/// Navigates to a node and executes a skill on the object under it.
/// Returns the object acted on when the skill succeeded.
#[allow(clippy::too_many_arguments)]
fn act(
    world: &mut WorldState,
    perceiver: &mut Perceiver,
    cmd: SkillCommand,
    cfg: &RunConfig,
    required: &BTreeSet<(SkillKind, usize)>,
    rng: &mut ChaCha8Rng,
    step: usize,
    log: &mut EpisodeLog,
    defect: &mut dyn FnMut(&mut EpisodeLog, Defect),
) -> Option<usize> {
    let mut fail = |log: &mut EpisodeLog, class: FailureClass, detail: String| {
        defect(
            log,
            Defect {
                step,
                class,
                detail,
            },
        )
    };
    let Some(node) = perceiver.graph.node(cmd.target).filter(|_| cmd.target != ROOT_ID) else {
        fail(log, FailureClass::Decision, format!("node {} does not exist", cmd.target));
        return None;
    };
    let centroid = node.centroid()?;
    let Some(object) = world.object_near(&centroid, TARGET_DISTANCE) else {
        fail(
            log,
            FailureClass::Perception,
            format!("nothing to {} at node {}", cmd.skill, cmd.target),
        );
        return None;
    };
    if !required.contains(&(cmd.skill, object)) {
        fail(
            log,
            FailureClass::Decision,
            format!("{} on node {} is not required", cmd.skill, cmd.target),
        );
    }
    let Some(goal) = approach_pose(world, node) else {
        fail(
            log,
            FailureClass::Action,
            format!("no free pose near node {}", cmd.target),
        );
        return None;
    };
    let nav = world.navigate(goal);
    log.push(LogEvent::Navigation {
        step,
        goal,
        path_length: nav.as_ref().ok().map(|r| r.path_length),
        error: nav.as_ref().err().map(|e| e.to_string()),
    });
    if let Err(e) = nav {
        fail(log, FailureClass::Action, e.to_string());
        return None;
    }

    let forced = cfg
        .scripted
        .iter()
        .any(|f| matches!(f, ScriptedFault::FailSkill { skill } if *skill == cmd.skill));
    let faults = if forced {
        FaultProfile {
            skill_failure_prob: 1.0,
            ..cfg.faults.clone()
        }
    } else {
        cfg.faults.clone()
    };
    let object_id = world.objects()[object].id.clone();
    let outcome = match world.apply_skill(cmd.skill, object, &faults, rng) {
        Ok(o) => o,
        Err(e) => {
            log.push(LogEvent::Skill {
                step,
                command: cmd,
                object: Some(object_id),
                success: false,
                attempts: 0,
                revealed_voxels: 0,
                error: Some(e.to_string()),
            });
            let class = match e {
                SkillError::OutOfReach { .. } => FailureClass::Action,
                _ => FailureClass::Decision,
            };
            fail(log, class, e.to_string());
            return None;
        }
    };
    log.push(LogEvent::Skill {
        step,
        command: cmd,
        object: Some(object_id.clone()),
        success: outcome.success,
        attempts: outcome.attempts,
        revealed_voxels: outcome.revealed_region.len(),
        error: None,
    });
    if !outcome.success {
        fail(
            log,
            FailureClass::Action,
            format!(
                "{} on {object_id} failed after {} attempts",
                cmd.skill, outcome.attempts
            ),
        );
        return None;
    }

    let node = perceiver.graph.node_mut(cmd.target).expect("checked above");
    if let Some(d) = outcome.displacement {
        shift_node(node, &d);
        log.push(LogEvent::NodeMoved {
            step,
            id: cmd.target,
            displacement: d,
        });
    }
    if let Some(phase) = phase_after(cmd.skill) {
        node.state.phase = phase;
    }
    if cmd.skill == SkillKind::Collect {
        node.state.collected = true;
    }
    node.explored = true;
    log.push(LogEvent::NodeStateChanged {
        step,
        id: cmd.target,
        state: node.state,
        explored: true,
    });
    if cmd.skill != SkillKind::Sit {
        if let Some(goal) = inspection_pose(world, node) {
            let nav = world.navigate(goal);
            log.push(LogEvent::Navigation {
                step,
                goal,
                path_length: nav.as_ref().ok().map(|r| r.path_length),
                error: nav.err().map(|e| e.to_string()),
            });
        }
    }
    if !outcome.revealed_region.is_empty() {
        let n = outcome.revealed_region.len() as f64;
        let sum = outcome
            .revealed_region
            .iter()
            .fold(Vector::zeros(), |acc, k| {
                acc + voxel_center(*k, cfg.builder.resolution).coords
            });
        world.look_at(Point::from(sum / n));
    }
    perceiver.anchor = Some(cmd.target);
    perceiver.feedback.push(ActionFeedback {
        skill: cmd.skill,
        target: cmd.target,
        revealed: outcome.revealed_region,
    });
    Some(object)
}
