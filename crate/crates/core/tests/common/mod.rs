//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use curiosim::builder::BuilderConfig;
use curiosim::geometry::{Point, Pose2D};
use curiosim::graph::NodeId;
use curiosim::harness::{ring_pose, EpisodeLog, LogEvent, Perceiver, RunConfig, ScriptedFault};
use curiosim::metrics::{FailureClass, LabeledForest};
use curiosim::planner::{PlannerDecision, PromptConfig, Transport, TransportError, MAX_EXAMPLES};
use curiosim::scene::{bundled_scene, RelationKind, SceneSpec, SkillKind, BUNDLED_SCENES};
use curiosim::world::{FaultProfile, WorldState, DEFAULT_RAY_BUDGET};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LABELS: [&str; 3] = ["box", "toy", "cup"];

pub fn noise_profile() -> FaultProfile {
    FaultProfile {
        detector_dropout_prob: 0.1,
        label_confusion_prob: 0.05,
        point_jitter_sigma: 0.01,
        skill_failure_prob: 0.1,
        max_retries: 2,
        pose_noise_sigma: 0.0,
    }
}

/// IoU by counting distinct floor-divided voxel indices.
pub fn brute_iou(a: &[Point], b: &[Point], res: f64) -> f64 {
    let key = |p: &Point| {
        (
            (p.x / res).floor() as i64,
            (p.y / res).floor() as i64,
            (p.z / res).floor() as i64,
        )
    };
    let sa: HashSet<_> = a.iter().map(key).collect();
    let sb: HashSet<_> = b.iter().map(key).collect();
    let mut inter = 0usize;
    for k in &sa {
        if sb.contains(k) {
            inter += 1;
        }
    }
    let union = sa.len() + sb.len() - inter;
    inter as f64 / union as f64
}

/// Random point cloud, either scattered or clustered near the origin.
pub fn random_cloud(rng: &mut ChaCha8Rng, res: f64) -> Vec<Point> {
    let n = rng.random_range(1..60);
    let spread = if rng.random_bool(0.5) { 4.0 } else { 12.0 } * res;
    let offset = rng.random_range(-2.0..2.0) * res;
    (0..n)
        .map(|_| {
            Point::new(
                offset + rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
            )
        })
        .collect()
}

/// Points at the voxel centers of an axis-aligned block of cells.
pub fn slab(x0: i64, nx: i64, ny: i64, nz: i64, res: f64) -> Vec<Point> {
    let mut out = Vec::new();
    for i in x0..x0 + nx {
        for j in 0..ny {
            for k in 0..nz {
                out.push(Point::new(
                    (i as f64 + 0.5) * res,
                    (j as f64 + 0.5) * res,
                    (k as f64 + 0.5) * res,
                ));
            }
        }
    }
    out
}

/// Random forest over ids 1..=n: each node gets a random parent among the
/// earlier nodes or none, and a random edge kind.
pub fn random_forest(rng: &mut ChaCha8Rng, max_nodes: usize) -> LabeledForest {
    let n = rng.random_range(0..=max_nodes);
    let mut f = LabeledForest::default();
    let mut ids: Vec<NodeId> = (1..=n as NodeId).collect();
    ids.sort_by_key(|_| rng.random::<u32>());
    for (i, &id) in ids.iter().enumerate() {
        f.labels.insert(id, LABELS.choose(rng).unwrap().to_string());
        if i > 0 && rng.random_bool(0.6) {
            let parent = ids[rng.random_range(0..i)];
            let kind = *RelationKind::ALL.choose(rng).unwrap();
            f.edges.insert((parent, id, kind));
        }
    }
    f
}

/// Injective partial maps from `0..n` into `0..m`: `out[i]` is the image
/// of `i` or `None`.
pub fn partial_injections(n: usize, m: usize) -> Vec<Vec<Option<usize>>> {
    fn rec(i: usize, n: usize, m: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        rec(i + 1, n, m, used, cur, out);
        cur.pop();
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                cur.push(Some(j));
                rec(i + 1, n, m, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, n, m, &mut vec![false; m], &mut Vec::new(), &mut out);
    out
}

/// Exhaustive edit distance: every node mapping, every edge pairing.
/// Nodes: delete, insert, relabel cost 1. A paired edge costs the number
/// of differing endpoints and kind, capped at 2 (delete + insert); an
/// unpaired edge costs 1.
pub fn brute_force_ged(a: &LabeledForest, b: &LabeledForest) -> usize {
    let an: Vec<NodeId> = a.labels.keys().copied().collect();
    let bn: Vec<NodeId> = b.labels.keys().copied().collect();
    let ae: Vec<_> = a.edges.iter().copied().collect();
    let be: Vec<_> = b.edges.iter().copied().collect();
    let edge_maps = partial_injections(ae.len(), be.len());
    let mut best = usize::MAX;
    for map in partial_injections(an.len(), bn.len()) {
        let image: BTreeMap<NodeId, NodeId> = an
            .iter()
            .zip(&map)
            .filter_map(|(&x, m)| m.map(|j| (x, bn[j])))
            .collect();
        let mut cost = 0;
        for (x, m) in an.iter().zip(&map) {
            match m {
                None => cost += 1,
                Some(j) => cost += (a.labels[x] != b.labels[&bn[*j]]) as usize,
            }
        }
        cost += bn.len() - image.len();
        let mut best_edges = usize::MAX;
        for em in &edge_maps {
            let mut c = 0;
            let mut paired = 0;
            for (e, m) in ae.iter().zip(em) {
                match m {
                    None => c += 1,
                    Some(j) => {
                        paired += 1;
                        let f = be[*j];
                        let miss = (image.get(&e.0) != Some(&f.0)) as usize
                            + (image.get(&e.1) != Some(&f.1)) as usize
                            + (e.2 != f.2) as usize;
                        c += miss.min(2);
                    }
                }
            }
            c += be.len() - paired;
            best_edges = best_edges.min(c);
        }
        best = best.min(cost + best_edges);
    }
    best
}

/// Random free start pose in the room.
pub fn random_free_pose(world: &WorldState, seed: u64) -> Pose2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = world.spec().room_bounds;
    loop {
        let x = rng.random_range(b.min[0] + 0.3..b.max[0] - 0.3);
        let y = rng.random_range(b.min[1] + 0.3..b.max[1] - 0.3);
        if world.is_free(x, y) {
            return Pose2D::new(x, y, rng.random_range(-3.1..3.1));
        }
    }
}

/// Outcome of a 12-view ring sweep: nodes per source object id, and the
/// ids of the objects some detection came from.
pub struct Sweep {
    pub nodes_per_object: BTreeMap<String, usize>,
    pub visible: BTreeSet<String>,
}

pub fn household_sweep(seed: u64) -> Sweep {
    let spec = Arc::new(bundled_scene("household").unwrap());
    let mut world = WorldState::new(spec, BuilderConfig::default().resolution);
    world.robot = random_free_pose(&world, seed);
    let mut p = Perceiver::new(&world, BuilderConfig::default(), seed);
    let mut log = EpisodeLog::default();
    let zero = FaultProfile::zero();
    p.observe(&world, &zero, &[], DEFAULT_RAY_BUDGET, 0, &mut log).unwrap();
    for k in 0..12 {
        world.navigate(ring_pose(&world, k, 12)).unwrap();
        p.observe(&world, &zero, &[], DEFAULT_RAY_BUDGET, k + 1, &mut log).unwrap();
    }
    let ids = |i: usize| world.objects()[i].id.clone();
    let mut nodes_per_object = BTreeMap::new();
    for id in p.graph.nodes.keys() {
        let src = p.dominant_source(*id).expect("node has a source");
        *nodes_per_object.entry(ids(src)).or_insert(0) += 1;
    }
    let mut visible = BTreeSet::new();
    for e in &log.events {
        if let LogEvent::Detections { detections, .. } = e {
            visible.extend(detections.iter().map(|d| ids(d.source)));
        }
    }
    Sweep {
        nodes_per_object,
        visible,
    }
}

/// Skill that reveals the target of each bundled scene.
pub fn scene_skill(scene: &str) -> SkillKind {
    match scene {
        "flip_box" => SkillKind::Flip,
        "open_drawer" => SkillKind::Open,
        "check_under" => SkillKind::Sit,
        "push_box" => SkillKind::Push,
        "lift_cloth" => SkillKind::Lift,
        _ => panic!("no skill for {scene}"),
    }
}

/// Label whose misdetection hides the way to the target.
pub fn key_label(scene: &str) -> &'static str {
    match scene {
        "flip_box" => "box",
        "open_drawer" => "handle",
        "check_under" => "table",
        "push_box" => "large_box",
        "lift_cloth" => "cloth",
        _ => panic!("no key label for {scene}"),
    }
}

/// Ten episodes per failure category, each with one scripted fault.
pub fn fault_episodes() -> Vec<(RunConfig, FailureClass)> {
    let mut out = Vec::new();
    for (i, scene) in BUNDLED_SCENES.iter().enumerate() {
        for seed in [i as u64, 10 + i as u64] {
            let faults = [
                ScriptedFault::Relabel {
                    from: key_label(scene).into(),
                    to: "plant".into(),
                },
                ScriptedFault::FailSkill {
                    skill: scene_skill(scene),
                },
                ScriptedFault::ForceDecision {
                    step: 0,
                    decision: PlannerDecision::Done,
                },
            ];
            for fault in faults {
                let mut cfg = RunConfig::bundled(scene).unwrap();
                cfg.seed = seed;
                cfg.randomize_start = true;
                let class = fault.category();
                cfg.scripted = vec![fault];
                out.push((cfg, class));
            }
        }
    }
    out
}

/// Answers with a fixed list of replies and counts the bundled examples
/// it finds in each prompt.
pub struct CountingTransport {
    pub replies: Vec<String>,
    pub next: usize,
    pub examples_seen: Vec<usize>,
}

impl CountingTransport {
    pub fn new(replies: Vec<String>) -> Self {
        Self {
            replies,
            next: 0,
            examples_seen: Vec::new(),
        }
    }
}

impl Transport for CountingTransport {
    fn complete(&mut self, prompt: &str) -> Result<String, TransportError> {
        let all = PromptConfig::bundled(MAX_EXAMPLES).unwrap().examples;
        self.examples_seen
            .push(all.iter().filter(|e| prompt.contains(e.trim_end())).count());
        let r = self.replies.get(self.next).cloned().unwrap_or_else(|| "DONE".into());
        self.next += 1;
        Ok(r)
    }
}

/// Planner decisions of a log rendered in the reply grammar.
pub fn decisions_as_replies(log: &EpisodeLog) -> Vec<String> {
    log.events
        .iter()
        .filter_map(|e| match e {
            LogEvent::Decision { decision, .. } => Some(match decision {
                PlannerDecision::Done => "DONE".to_string(),
                PlannerDecision::Scan(_) => "SCAN".to_string(),
                PlannerDecision::Skill(c) => format!("SKILL {} TARGET {}", c.skill, c.target),
            }),
            _ => None,
        })
        .collect()
}

/// Scene relations as label triples; labels are unique in bundled scenes.
pub fn gt_label_edges(spec: &SceneSpec) -> BTreeSet<(String, String, RelationKind)> {
    let flat = spec.flatten();
    let label = |id: &str| flat.iter().find(|o| o.id == id).unwrap().label.clone();
    let labels: Vec<&str> = flat.iter().map(|o| o.label.as_str()).collect();
    assert_eq!(
        labels.iter().collect::<BTreeSet<_>>().len(),
        labels.len(),
        "labels repeat"
    );
    spec.gt_relations
        .iter()
        .map(|r| (label(&r.parent), label(&r.child), r.kind))
        .collect()
}
