//! The relational object graph: nodes with geometry and semantics, directed
//! relation edges, and a virtual root that anchors every tree of the forest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{centroid, Point, Vector, VOXEL_RESOLUTION};
use crate::scene::{InteractionState, Phase, RelationKind, SceneSpec, SkillKind};

pub type NodeId = u32;

pub const ROOT_ID: NodeId = 0;
pub const ROOT_LABEL: &str = "root";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub node_id: NodeId,
    pub label: String,
    pub points: Vec<Point>,
    pub normals: Vec<Vector>,
    pub state: InteractionState,
    pub explored: bool,
    pub grounded_skills: Vec<SkillKind>,
}

impl ObjectNode {
    pub fn centroid(&self) -> Option<Point> {
        centroid(&self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "source", content = "skill", rename_all = "snake_case")]
pub enum Provenance {
    Geometric,
    Semantic,
    Action(SkillKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationEdge {
    pub parent: NodeId,
    pub child: NodeId,
    pub kind: RelationKind,
    pub provenance: Provenance,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge endpoints must differ (node {0})")]
    SelfLoop(NodeId),
    #[error("node {0} does not exist")]
    MissingNode(NodeId),
    #[error("node {0} already has a parent")]
    SecondParent(NodeId),
    #[error("edge {parent} -> {child} would close a cycle")]
    Cycle { parent: NodeId, child: NodeId },
    #[error("node {0} already exists")]
    DuplicateNode(NodeId),
}

/// Forest of object nodes under a virtual root (id 0). Nodes without an
/// explicit parent edge hang off the root through an implicit `on` edge.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectGraph {
    pub nodes: BTreeMap<NodeId, ObjectNode>,
    pub edges: Vec<RelationEdge>,
}

impl ObjectGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn next_id(&self) -> NodeId {
        self.nodes.keys().next_back().map_or(1, |k| k + 1)
    }

    pub fn insert_node(&mut self, node: ObjectNode) -> Result<(), GraphError> {
        if node.node_id == ROOT_ID || self.nodes.contains_key(&node.node_id) {
            return Err(GraphError::DuplicateNode(node.node_id));
        }
        self.nodes.insert(node.node_id, node);
        Ok(())
    }

    pub fn node(&self, id: NodeId) -> Option<&ObjectNode> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut ObjectNode> {
        self.nodes.get_mut(&id)
    }

    /// Explicit parent edge of a node.
    pub fn parent_edge(&self, child: NodeId) -> Option<&RelationEdge> {
        self.edges.iter().find(|e| e.child == child)
    }

    /// Parent of a node, counting the implicit root edge.
    pub fn parent(&self, child: NodeId) -> Option<NodeId> {
        if child == ROOT_ID {
            return None;
        }
        Some(self.parent_edge(child).map_or(ROOT_ID, |e| e.parent))
    }

    /// Relation to the parent, counting the implicit root edge as `on`.
    pub fn relation_to_parent(&self, child: NodeId) -> Option<RelationKind> {
        if child == ROOT_ID {
            return None;
        }
        Some(self.parent_edge(child).map_or(RelationKind::On, |e| e.kind))
    }

    /// Children in ascending id order.
    pub fn children(&self, id: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .nodes
            .keys()
            .copied()
            .filter(|c| self.parent(*c) == Some(id))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn is_ancestor(&self, ancestor: NodeId, mut node: NodeId) -> bool {
        while let Some(p) = self.parent(node) {
            if p == ancestor {
                return true;
            }
            node = p;
        }
        false
    }

    pub fn add_edge(&mut self, edge: RelationEdge) -> Result<(), GraphError> {
        if edge.parent == edge.child {
            return Err(GraphError::SelfLoop(edge.child));
        }
        for id in [edge.parent, edge.child] {
            if id != ROOT_ID && !self.nodes.contains_key(&id) {
                return Err(GraphError::MissingNode(id));
            }
        }
        if edge.child == ROOT_ID {
            return Err(GraphError::Cycle {
                parent: edge.parent,
                child: edge.child,
            });
        }
        if self.parent_edge(edge.child).is_some() {
            return Err(GraphError::SecondParent(edge.child));
        }
        if self.is_ancestor(edge.child, edge.parent) {
            return Err(GraphError::Cycle {
                parent: edge.parent,
                child: edge.child,
            });
        }
        self.edges.push(edge);
        Ok(())
    }

    /// Checks id uniqueness, unit normals, single parents and acyclicity.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (id, n) in &self.nodes {
            if *id != n.node_id || *id == ROOT_ID {
                return Err(format!("node key {id} does not match id {}", n.node_id));
            }
            if n.points.len() != n.normals.len() {
                return Err(format!("node {id}: points and normals differ in length"));
            }
            if let Some(bad) = n.normals.iter().find(|v| (v.norm() - 1.0).abs() >= 1e-6) {
                return Err(format!("node {id}: non-unit normal {bad:?}"));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.edges {
            if !seen.insert(e.child) {
                return Err(format!("node {} has two parents", e.child));
            }
            if e.parent == e.child {
                return Err(format!("self loop on {}", e.child));
            }
        }
        for id in self.nodes.keys() {
            let mut cur = *id;
            let mut steps = 0;
            while let Some(p) = self.parent(cur) {
                cur = p;
                steps += 1;
                if steps > self.nodes.len() + 1 {
                    return Err(format!("cycle through node {id}"));
                }
            }
        }
        Ok(())
    }
}

pub fn grounded_skills_for(kind: crate::scene::ObjectKind) -> Vec<SkillKind> {
    match kind.exploration_skill() {
        Some(s) => vec![s],
        None => vec![SkillKind::Collect],
    }
}

/// Ground-truth graph of a scene: one node per object (ids in discovery
/// order starting at 1), box-surface samples on the voxel lattice, and
/// exactly the scene's relations as explicit edges.
pub fn ground_truth_graph(spec: &SceneSpec) -> ObjectGraph {
    let flat = spec.flatten();
    let geometry: Vec<_> = flat.iter().map(|o| o.geometry).collect();
    let states: Vec<_> = flat.iter().map(|o| o.state0).collect();
    ground_truth_graph_with(spec, &geometry, &states)
}

/// Ground-truth graph with per-object geometry and states overridden, used
/// to score against the world after objects have been moved.
pub fn ground_truth_graph_with(
    spec: &SceneSpec,
    geometry: &[crate::geometry::OrientedBox],
    states: &[InteractionState],
) -> ObjectGraph {
    let flat = spec.flatten();
    let mut graph = ObjectGraph::new();
    let mut ids = BTreeMap::new();
    for o in &flat {
        let id = o.index as NodeId + 1;
        ids.insert(o.id.clone(), id);
        let samples = geometry[o.index].surface_samples(VOXEL_RESOLUTION);
        let label_is_part = o.handle_of.is_some();
        graph
            .insert_node(ObjectNode {
                node_id: id,
                label: o.label.clone(),
                points: samples.iter().map(|(p, _)| *p).collect(),
                normals: samples.iter().map(|(_, n)| *n).collect(),
                state: states[o.index],
                explored: states[o.index].phase.reveals_contents(),
                grounded_skills: if label_is_part {
                    Vec::new()
                } else {
                    grounded_skills_for(o.kind)
                },
            })
            .expect("fresh ids");
    }
    for r in &spec.gt_relations {
        graph
            .add_edge(RelationEdge {
                parent: ids[&r.parent],
                child: ids[&r.child],
                kind: r.kind,
                provenance: Provenance::Semantic,
            })
            .expect("scene relations form a forest");
    }
    graph
}

/// Short state label for a phase that has not yet been acted on.
pub fn is_unexplored(phase: Phase) -> bool {
    matches!(
        phase,
        Phase::Closed | Phase::Upright | Phase::Covered | Phase::InPlace
    )
}
