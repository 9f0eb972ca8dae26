//! Rule-based relation inference with action provenance.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::geometry::{voxel_key, Aabb, Point, VoxelKey};
use crate::graph::{NodeId, ObjectGraph, Provenance, RelationEdge, ROOT_ID};
use crate::scene::{ObjectKind, RelationKind, SkillKind};
use crate::semantics::{is_container_like, is_part_label, kind_for_label};

use super::voxelize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationConfig {
    pub resolution: f64,
    /// Contact distance for `of`, and vertical slack for `on` and `under`.
    pub contact_tolerance: f64,
    pub of_fraction: f64,
    pub inside_fraction: f64,
    pub on_overlap: f64,
    pub under_dilation: f64,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            resolution: crate::geometry::VOXEL_RESOLUTION,
            contact_tolerance: 0.03,
            of_fraction: 0.5,
            inside_fraction: 0.9,
            on_overlap: 0.3,
            under_dilation: 0.05,
        }
    }
}

/// A successful skill and the voxels it exposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionFeedback {
    pub skill: SkillKind,
    pub target: NodeId,
    pub revealed: BTreeSet<VoxelKey>,
}

struct NodeGeom {
    id: NodeId,
    label: String,
    points: Vec<Point>,
    voxels: HashSet<VoxelKey>,
    aabb: Aabb,
    centroid: Point,
}

fn node_geoms(graph: &ObjectGraph, res: f64) -> Vec<NodeGeom> {
    graph
        .nodes
        .values()
        .filter(|n| n.node_id != ROOT_ID && !n.points.is_empty())
        .map(|n| NodeGeom {
            id: n.node_id,
            label: n.label.clone(),
            points: n.points.clone(),
            voxels: voxelize(&n.points, res),
            aabb: Aabb::from_points(&n.points).expect("non-empty"),
            centroid: n.centroid().expect("non-empty"),
        })
        .collect()
}

/// Distance from a point to the nearest voxel of a set, searching the
/// voxels within `reach` cells.
fn distance_to_voxels(p: &Point, voxels: &HashSet<VoxelKey>, res: f64, reach: i32) -> f64 {
    let k = voxel_key(p, res);
    let mut best = f64::INFINITY;
    for dx in -reach..=reach {
        for dy in -reach..=reach {
            for dz in -reach..=reach {
                let v = [k[0] + dx, k[1] + dy, k[2] + dz];
                if !voxels.contains(&v) {
                    continue;
                }
                let mut d2 = 0.0;
                for a in 0..3 {
                    let lo = v[a] as f64 * res;
                    let hi = lo + res;
                    let e = if p[a] < lo {
                        lo - p[a]
                    } else if p[a] > hi {
                        p[a] - hi
                    } else {
                        0.0
                    };
                    d2 += e * e;
                }
                best = best.min(d2.sqrt());
            }
        }
    }
    best
}

fn xy_overlap(a: &Aabb, b: &Aabb) -> f64 {
    let w = (a.max[0].min(b.max[0]) - a.min[0].max(b.min[0])).max(0.0);
    let h = (a.max[1].min(b.max[1]) - a.min[1].max(b.min[1])).max(0.0);
    w * h
}

fn xy_area(a: &Aabb) -> f64 {
    (a.extent(0) * a.extent(1)).max(1e-9)
}

/// Score of `child` standing in relation `kind` to `parent`, if the rule
/// fires.
fn rule_score(
    kind: RelationKind,
    child: &NodeGeom,
    parent: &NodeGeom,
    viewpoint: Option<&Point>,
    cfg: &RelationConfig,
) -> Option<f64> {
    let tol = cfg.contact_tolerance;
    match kind {
        RelationKind::Of => {
            if !is_part_label(&child.label) || is_part_label(&parent.label) {
                return None;
            }
            let reach = (tol / cfg.resolution).ceil() as i32;
            let near = child
                .points
                .iter()
                .filter(|p| distance_to_voxels(p, &parent.voxels, cfg.resolution, reach) <= tol)
                .count();
            let frac = near as f64 / child.points.len() as f64;
            (frac >= cfg.of_fraction).then_some(frac)
        }
        RelationKind::Inside => {
            if !is_container_like(&parent.label) || is_part_label(&child.label) {
                return None;
            }
            let inside = child
                .points
                .iter()
                .filter(|p| parent.aabb.contains(p, 1e-9))
                .count();
            let frac = inside as f64 / child.points.len() as f64;
            (frac >= cfg.inside_fraction).then_some(frac)
        }
        RelationKind::On => {
            if is_part_label(&parent.label) {
                return None;
            }
            let gap = (child.aabb.min[2] - parent.aabb.max[2]).abs();
            let frac = xy_overlap(&child.aabb, &parent.aabb) / xy_area(&child.aabb);
            (gap <= tol && frac >= cfg.on_overlap).then_some(frac)
        }
        RelationKind::Under => {
            if is_part_label(&parent.label) {
                return None;
            }
            let d = cfg.under_dilation;
            let (c, p) = (&child.aabb, &parent.aabb);
            let fits = c.max[2] <= p.min[2] + tol
                && c.min[0] >= p.min[0] - d
                && c.max[0] <= p.max[0] + d
                && c.min[1] >= p.min[1] - d
                && c.max[1] <= p.max[1] + d;
            fits.then_some(1.0)
        }
        RelationKind::Behind => {
            if kind_for_label(&parent.label) != ObjectKind::MovableBlocker {
                return None;
            }
            let eye = viewpoint?;
            let to_child = child.centroid - eye;
            let dist = to_child.norm();
            if dist < 1e-9 || (parent.centroid - eye).norm() >= dist {
                return None;
            }
            let dir = to_child / dist;
            let (t0, _) = parent.aabb.ray_interval(eye, &dir)?;
            (t0 < dist).then_some(1.0)
        }
    }
}

/// Adds relation edges for unparented nodes and returns them.
///
/// Nodes in `new_nodes` whose centroid lies in (or next to) the region a
/// successful skill revealed get the edge that skill implies. Every other
/// unparented node is tested against the geometric rules in the order
/// of, inside, on, under, behind; the first rule with a qualifying parent
/// wins, choosing the best-scoring parent and then the lowest id.
pub fn infer_relations(
    graph: &mut ObjectGraph,
    new_nodes: &[NodeId],
    feedback: &[ActionFeedback],
    viewpoint: Option<&Point>,
    cfg: &RelationConfig,
) -> Vec<RelationEdge> {
    let res = cfg.resolution;
    let geoms = node_geoms(graph, res);
    let mut added = Vec::new();

    let mut fresh: Vec<NodeId> = new_nodes.to_vec();
    fresh.sort();
    for &child in &fresh {
        if graph.parent_edge(child).is_some() {
            continue;
        }
        let Some(g) = geoms.iter().find(|g| g.id == child) else {
            continue;
        };
        let k = voxel_key(&g.centroid, res);
        for fb in feedback.iter().rev() {
            let Some(kind) = fb.skill.revealed_relation() else {
                continue;
            };
            if fb.target == child || graph.node(fb.target).is_none() {
                continue;
            }
            let near = (-1..=1).any(|dx| {
                (-1..=1).any(|dy| {
                    (-1..=1).any(|dz| fb.revealed.contains(&[k[0] + dx, k[1] + dy, k[2] + dz]))
                })
            });
            if !near {
                continue;
            }
            let edge = RelationEdge {
                parent: fb.target,
                child,
                kind,
                provenance: Provenance::Action(fb.skill),
            };
            if graph.add_edge(edge).is_ok() {
                added.push(edge);
                break;
            }
        }
    }

    for child in &geoms {
        if graph.parent_edge(child.id).is_some() {
            continue;
        }
        for kind in RelationKind::ALL {
            let mut best: Option<(f64, NodeId)> = None;
            for parent in &geoms {
                if parent.id == child.id || graph.is_ancestor(child.id, parent.id) {
                    continue;
                }
                if let Some(s) = rule_score(kind, child, parent, viewpoint, cfg) {
                    if best.is_none_or(|(bs, bid)| s > bs || (s == bs && parent.id < bid)) {
                        best = Some((s, parent.id));
                    }
                }
            }
            if let Some((_, parent)) = best {
                let edge = RelationEdge {
                    parent,
                    child: child.id,
                    kind,
                    provenance: Provenance::Geometric,
                };
                if graph.add_edge(edge).is_ok() {
                    added.push(edge);
                    break;
                }
            }
        }
    }
    added
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OrientedBox;
    use crate::graph::ObjectNode;
    use crate::scene::{InteractionState, Phase};

    fn node(id: NodeId, label: &str, b: OrientedBox) -> ObjectNode {
        let s = b.surface_samples(0.01);
        let mut n = ObjectNode {
            node_id: id,
            label: label.into(),
            points: vec![],
            normals: vec![],
            state: InteractionState::new(Phase::Static),
            explored: false,
            grounded_skills: vec![],
        };
        super::super::fuse_node(&mut n, &s.iter().map(|x| x.0).collect::<Vec<_>>(), 0.05);
        n
    }

    #[test]
    fn handle_attaches_to_cabinet() {
        let mut g = ObjectGraph::new();
        g.insert_node(node(1, "cabinet", OrientedBox::new([0.0, 0.0, 0.3], [0.4, 0.5, 0.6], 0.0)))
            .unwrap();
        g.insert_node(node(2, "handle", OrientedBox::new([0.21, 0.0, 0.45], [0.02, 0.16, 0.03], 0.0)))
            .unwrap();
        let e = infer_relations(&mut g, &[], &[], None, &RelationConfig::default());
        assert_eq!(e.len(), 1);
        assert_eq!((e[0].parent, e[0].child, e[0].kind), (1, 2, RelationKind::Of));
    }

    #[test]
    fn cup_on_table_and_ball_under() {
        let mut g = ObjectGraph::new();
        g.insert_node(node(1, "table", OrientedBox::new([0.0, 0.0, 0.675], [0.6, 1.0, 0.05], 0.0)))
            .unwrap();
        g.insert_node(node(2, "cup", OrientedBox::new([0.1, 0.1, 0.76], [0.08, 0.08, 0.12], 0.0)))
            .unwrap();
        g.insert_node(node(3, "ball", OrientedBox::new([0.0, -0.2, 0.06], [0.12, 0.12, 0.12], 0.0)))
            .unwrap();
        let e = infer_relations(&mut g, &[], &[], None, &RelationConfig::default());
        let got: Vec<_> = e.iter().map(|e| (e.parent, e.child, e.kind)).collect();
        assert_eq!(got, vec![(1, 2, RelationKind::On), (1, 3, RelationKind::Under)]);
        // Unchanged graph: nothing more to add.
        assert!(infer_relations(&mut g, &[], &[], None, &RelationConfig::default()).is_empty());
    }

    #[test]
    fn lifted_cloth_gives_action_edge() {
        let mut g = ObjectGraph::new();
        let cloth = OrientedBox::new([0.0, 0.0, 0.075], [0.45, 0.45, 0.15], 0.0);
        g.insert_node(node(1, "cloth", cloth)).unwrap();
        g.insert_node(node(2, "toy", OrientedBox::new([0.0, 0.0, 0.045], [0.1, 0.1, 0.08], 0.0)))
            .unwrap();
        let mut revealed = BTreeSet::new();
        for p in cloth.surface_samples(0.025) {
            revealed.insert(voxel_key(&p.0, 0.05));
        }
        let fb = ActionFeedback {
            skill: SkillKind::Lift,
            target: 1,
            revealed,
        };
        let e = infer_relations(&mut g, &[2], &[fb], None, &RelationConfig::default());
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].kind, RelationKind::Under);
        assert_eq!(e[0].provenance, Provenance::Action(SkillKind::Lift));
        g.check_invariants().unwrap();
    }

    #[test]
    fn toy_inside_open_box_and_behind_blocker() {
        let mut g = ObjectGraph::new();
        g.insert_node(node(1, "box", OrientedBox::new([0.0, 0.0, 0.15], [0.35, 0.45, 0.3], 0.0)))
            .unwrap();
        g.insert_node(node(2, "toy", OrientedBox::new([0.0, 0.0, 0.05], [0.1, 0.1, 0.1], 0.0)))
            .unwrap();
        g.insert_node(node(3, "large_box", OrientedBox::new([2.0, 0.0, 0.45], [0.3, 0.7, 0.9], 0.0)))
            .unwrap();
        g.insert_node(node(4, "ball", OrientedBox::new([2.5, 0.0, 0.05], [0.1, 0.1, 0.1], 0.0)))
            .unwrap();
        let eye = Point::new(1.0, 0.0, 0.8);
        let e = infer_relations(&mut g, &[], &[], Some(&eye), &RelationConfig::default());
        let got: Vec<_> = e.iter().map(|e| (e.parent, e.child, e.kind)).collect();
        assert_eq!(got, vec![(1, 2, RelationKind::Inside), (3, 4, RelationKind::Behind)]);
    }
}
