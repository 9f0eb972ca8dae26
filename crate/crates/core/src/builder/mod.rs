//! Graph construction: voxel IoU, label-gated association, node fusion,
//! PCA axes and relation inference.

mod axes;
mod relations;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::Detection;
use crate::geometry::{centroid, voxel_center, voxel_key, Point, Vector, VoxelKey};
use crate::graph::{NodeId, ObjectGraph, ObjectNode, RelationEdge, ROOT_ID};
use crate::scene::InteractionState;
use crate::semantics::{kind_for_label, skills_for_label};

pub use axes::{estimate_axes, Axes, AxesError};
pub use relations::{infer_relations, ActionFeedback, RelationConfig};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IouError {
    #[error("IoU of an empty point set")]
    EmptyInput,
    #[error("resolution must be positive")]
    BadResolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuilderConfig {
    pub resolution: f64,
    pub tau: f64,
    pub relations: RelationConfig,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            resolution: crate::geometry::VOXEL_RESOLUTION,
            tau: 0.25,
            relations: RelationConfig::default(),
        }
    }
}

pub fn voxelize(points: &[Point], resolution: f64) -> HashSet<VoxelKey> {
    points.iter().map(|p| voxel_key(p, resolution)).collect()
}

fn set_iou(a: &HashSet<VoxelKey>, b: &HashSet<VoxelKey>) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let inter = small.iter().filter(|k| large.contains(*k)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection over union of the voxel sets of two point clouds.
pub fn voxel_iou(a: &[Point], b: &[Point], resolution: f64) -> Result<f64, IouError> {
    if !(resolution > 0.0) {
        return Err(IouError::BadResolution);
    }
    if a.is_empty() || b.is_empty() {
        return Err(IouError::EmptyInput);
    }
    Ok(set_iou(&voxelize(a, resolution), &voxelize(b, resolution)))
}

/// Detections × nodes matrix of IoU scores, zero where labels differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationMatrix {
    pub values: Vec<Vec<f64>>,
    /// Node id of each column.
    pub node_ids: Vec<NodeId>,
}

pub fn association_matrix(
    dets: &[Detection],
    graph: &ObjectGraph,
    resolution: f64,
) -> AssociationMatrix {
    let nodes: Vec<&ObjectNode> = graph.nodes.values().filter(|n| n.node_id != ROOT_ID).collect();
    let node_sets: Vec<HashSet<VoxelKey>> =
        nodes.iter().map(|n| voxelize(&n.points, resolution)).collect();
    let values = dets
        .iter()
        .map(|d| {
            let ds = voxelize(&d.points, resolution);
            nodes
                .iter()
                .zip(&node_sets)
                .map(|(n, ns)| {
                    if n.label == d.label && !ds.is_empty() {
                        set_iou(&ds, ns)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    AssociationMatrix {
        values,
        node_ids: nodes.iter().map(|n| n.node_id).collect(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphUpdate {
    pub matched: Vec<(usize, NodeId)>,
    pub new_nodes: Vec<usize>,
    pub new_edges: Vec<RelationEdge>,
}

/// One-to-one matching of detections to nodes. Rows are taken in
/// descending order of their best score; each takes its best available
/// node at or above `tau` (lower id on ties) or becomes a new node.
pub fn associate(c: &AssociationMatrix, tau: f64) -> GraphUpdate {
    let best = |row: &[f64]| row.iter().copied().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..c.values.len()).collect();
    order.sort_by(|&a, &b| best(&c.values[b]).total_cmp(&best(&c.values[a])).then(a.cmp(&b)));
    let mut taken = HashSet::new();
    let mut update = GraphUpdate::default();
    for i in order {
        let mut choice: Option<(f64, NodeId)> = None;
        for (j, &score) in c.values[i].iter().enumerate() {
            let id = c.node_ids[j];
            if score < tau || taken.contains(&id) {
                continue;
            }
            let better = match choice {
                None => true,
                Some((s, cid)) => score > s || (score == s && id < cid),
            };
            if better {
                choice = Some((score, id));
            }
        }
        match choice {
            Some((_, id)) => {
                taken.insert(id);
                update.matched.push((i, id));
            }
            None => update.new_nodes.push(i),
        }
    }
    update.matched.sort();
    update.new_nodes.sort();
    update
}

/// Points added to or replaced in a node by a fusion step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FuseDelta {
    pub added: Vec<Point>,
    pub replaced: Vec<Point>,
}

impl FuseDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.replaced.is_empty()
    }
}

fn center_distance(p: &Point, key: VoxelKey, resolution: f64) -> f64 {
    (p - voxel_center(key, resolution)).norm_squared()
}

/// Keeps one point per voxel: the one nearest the voxel center, ties going
/// to the lexicographically smaller point.
fn better(p: &Point, q: &Point, key: VoxelKey, resolution: f64) -> bool {
    let dp = center_distance(p, key, resolution);
    let dq = center_distance(q, key, resolution);
    dp < dq || (dp == dq && (p.x, p.y, p.z) < (q.x, q.y, q.z))
}

fn dedup(points: &[Point], resolution: f64) -> BTreeMap<VoxelKey, Point> {
    let mut out: BTreeMap<VoxelKey, Point> = BTreeMap::new();
    for p in points {
        let k = voxel_key(p, resolution);
        match out.get(&k) {
            Some(q) if !better(p, q, k, resolution) => {}
            _ => {
                out.insert(k, *p);
            }
        }
    }
    out
}

/// Creates a node from a detection.
pub fn new_node(id: NodeId, det: &Detection, resolution: f64) -> ObjectNode {
    let voxels = dedup(&det.points, resolution);
    let points: Vec<Point> = voxels.into_values().collect();
    let normals = estimate_normals(&points, resolution);
    ObjectNode {
        node_id: id,
        label: det.label.clone(),
        points,
        normals,
        state: InteractionState::new(kind_for_label(&det.label).initial_phase()),
        explored: false,
        grounded_skills: skills_for_label(&det.label),
    }
}

/// Merges detection points into a node, one point per voxel. The label
/// and id are unchanged. Fusing the same points again is a no-op.
pub fn fuse_node(node: &mut ObjectNode, points: &[Point], resolution: f64) -> FuseDelta {
    let mut voxels = dedup(&node.points, resolution);
    let mut delta = FuseDelta::default();
    for (k, p) in dedup(points, resolution) {
        match voxels.get(&k) {
            None => {
                voxels.insert(k, p);
                delta.added.push(p);
            }
            Some(q) if better(&p, q, k, resolution) => {
                voxels.insert(k, p);
                delta.replaced.push(p);
            }
            _ => {}
        }
    }
    if !delta.is_empty() {
        node.points = voxels.into_values().collect();
        node.normals = estimate_normals(&node.points, resolution);
    }
    delta
}

/// Applies a fusion delta recorded earlier (log replay).
pub fn apply_delta(node: &mut ObjectNode, delta: &FuseDelta, resolution: f64) {
    let mut pts = delta.added.clone();
    pts.extend(&delta.replaced);
    fuse_node(node, &pts, resolution);
}

/// Surface normals from the covariance of each point's 3×3×3 voxel
/// neighbourhood, oriented away from the cloud centroid. Points with a
/// degenerate neighbourhood get +z.
pub fn estimate_normals(points: &[Point], resolution: f64) -> Vec<Vector> {
    let Some(c) = centroid(points) else {
        return Vec::new();
    };
    let mut index: HashMap<VoxelKey, Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        index.entry(voxel_key(p, resolution)).or_default().push(i);
    }
    points
        .iter()
        .map(|p| {
            let k = voxel_key(p, resolution);
            let mut nb = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(v) = index.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            nb.extend(v.iter().map(|&i| points[i]));
                        }
                    }
                }
            }
            let mut n = if nb.len() >= 3 {
                let m = centroid(&nb).expect("non-empty");
                let mut cov = Matrix3::zeros();
                for q in &nb {
                    let d = q - m;
                    cov += d * d.transpose();
                }
                let eig = SymmetricEigen::new(cov);
                let (imin, _) = eig
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .expect("three eigenvalues");
                let mid = {
                    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
                    ev.sort_by(f64::total_cmp);
                    ev[1]
                };
                if mid > 1e-12 {
                    eig.eigenvectors.column(imin).into_owned()
                } else {
                    Vector::z()
                }
            } else {
                Vector::z()
            };
            if n.dot(&(p - c)) < 0.0 {
                n = -n;
            }
            n
        })
        .collect()
}

/// Voxel keys of a set of points (deterministic order).
pub fn voxel_set(points: &[Point], resolution: f64) -> BTreeSet<VoxelKey> {
    points.iter().map(|p| voxel_key(p, resolution)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(label: &str, points: Vec<Point>) -> Detection {
        Detection {
            label: label.into(),
            points,
            confidence: 1.0,
            source: 0,
        }
    }

    fn slab(x0: i32, nx: i32, ny: i32) -> Vec<Point> {
        let mut out = Vec::new();
        for i in x0..x0 + nx {
            for j in 0..ny {
                out.push(Point::new(
                    (i as f64 + 0.5) * 0.05,
                    (j as f64 + 0.5) * 0.05,
                    0.025,
                ));
            }
        }
        out
    }

    #[test]
    fn iou_basics() {
        let a = slab(0, 10, 10);
        assert_eq!(voxel_iou(&a, &a, 0.05).unwrap(), 1.0);
        let far: Vec<Point> = a.iter().map(|p| p + Vector::new(5.0, 0.0, 0.0)).collect();
        assert_eq!(voxel_iou(&a, &far, 0.05).unwrap(), 0.0);
        assert_eq!(voxel_iou(&[], &a, 0.05), Err(IouError::EmptyInput));
        let b = slab(5, 10, 10);
        assert!((voxel_iou(&a, &b, 0.05).unwrap() - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn matrix_is_label_gated() {
        let mut g = ObjectGraph::new();
        g.insert_node(new_node(1, &det("box", slab(0, 4, 4)), 0.05)).unwrap();
        let m = association_matrix(&[det("cup", slab(0, 4, 4)), det("box", slab(0, 4, 4))], &g, 0.05);
        assert_eq!(m.values, vec![vec![0.0], vec![1.0]]);
        let empty = association_matrix(&[], &g, 0.05);
        assert!(empty.values.is_empty());
    }

    fn matrix(values: Vec<Vec<f64>>, ids: Vec<NodeId>) -> AssociationMatrix {
        AssociationMatrix {
            values,
            node_ids: ids,
        }
    }

    #[test]
    fn thresholded_assignment() {
        let u = associate(&matrix(vec![vec![0.6]], vec![3]), 0.25);
        assert_eq!(u.matched, vec![(0, 3)]);
        let u = associate(&matrix(vec![vec![0.1]], vec![3]), 0.25);
        assert_eq!(u.new_nodes, vec![0]);
    }

    #[test]
    fn greedy_order_resolves_conflicts() {
        // Both rows prefer node 3; the stronger row wins it.
        let m = matrix(vec![vec![0.5, 0.3], vec![0.9, 0.0]], vec![3, 4]);
        let u = associate(&m, 0.25);
        assert_eq!(u.matched, vec![(0, 4), (1, 3)]);
        let m = matrix(vec![vec![0.5, 0.2], vec![0.9, 0.0]], vec![3, 4]);
        let u = associate(&m, 0.25);
        assert_eq!(u.matched, vec![(1, 3)]);
        assert_eq!(u.new_nodes, vec![0]);
        // Ties go to the lower id.
        let m = matrix(vec![vec![0.5, 0.5]], vec![7, 2]);
        assert_eq!(associate(&m, 0.25).matched, vec![(0, 2)]);
    }

    #[test]
    fn fusion_dedups_and_is_idempotent() {
        let d = det("box", slab(0, 10, 10));
        let mut n = new_node(1, &d, 0.05);
        assert_eq!(n.points.len(), 100);
        let before = n.clone();
        for _ in 0..100 {
            assert!(fuse_node(&mut n, &d.points, 0.05).is_empty());
        }
        assert_eq!(n, before);
        let other = slab(10, 10, 10);
        fuse_node(&mut n, &other, 0.05);
        assert_eq!(n.points.len(), 200);
        assert_eq!(n.label, "box");
        assert_eq!(n.normals.len(), n.points.len());
        for nrm in &n.normals {
            assert!((nrm.norm() - 1.0).abs() < 1e-9);
            assert!(nrm.z.abs() > 0.99);
        }
    }

    fn brute_iou(a: &[Point], b: &[Point]) -> f64 {
        let key = |p: &Point| {
            (
                (p.x / 0.05).floor() as i64,
                (p.y / 0.05).floor() as i64,
                (p.z / 0.05).floor() as i64,
            )
        };
        let mut va: Vec<_> = a.iter().map(key).collect();
        let mut vb: Vec<_> = b.iter().map(key).collect();
        va.sort();
        va.dedup();
        vb.sort();
        vb.dedup();
        let inter = va.iter().filter(|k| vb.contains(k)).count();
        inter as f64 / (va.len() + vb.len() - inter) as f64
    }

    fn cloud() -> impl Strategy<Value = Vec<Point>> {
        prop::collection::vec((-0.3f64..0.3, -0.3f64..0.3, 0.0f64..0.3), 1..60)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Point::new(x, y, z)).collect())
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_bounded_and_matches_counter(a in cloud(), b in cloud()) {
            let ab = voxel_iou(&a, &b, 0.05).unwrap();
            let ba = voxel_iou(&b, &a, 0.05).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, brute_iou(&a, &b));
            let same = voxel_set(&a, 0.05) == voxel_set(&b, 0.05);
            prop_assert_eq!(ab == 1.0, same);
        }

        #[test]
        fn each_detection_assigned_once(rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 0..6)) {
            let m = matrix(rows.clone(), vec![1, 2, 3, 4]);
            let u = associate(&m, 0.25);
            let mut seen: Vec<usize> = u.matched.iter().map(|x| x.0).chain(u.new_nodes.iter().copied()).collect();
            seen.sort();
            prop_assert_eq!(seen, (0..rows.len()).collect::<Vec<_>>());
            let mut ids: Vec<NodeId> = u.matched.iter().map(|x| x.1).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), u.matched.len());
        }
    }
}
