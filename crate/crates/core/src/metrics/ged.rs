//! Graph edit distance between relation forests under unit costs.
//!
//! A node mapping sends each node of the first graph to a node of the
//! second or deletes it. Given a mapping, node costs are deletions,
//! insertions and relabels; edge costs come from a maximum-weight pairing
//! of edges where an identical pair is free and a pair differing in one
//! endpoint (a move) or in its kind (a relabel) costs 1. The distance is
//! the minimum over all mappings, found by best-first search.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use super::{match_nodes, max_weight_assignment};
use crate::graph::{NodeId, ObjectGraph};
use crate::scene::RelationKind;

/// Largest node count searched exactly.
pub const EXACT_NODE_LIMIT: usize = 14;
const MAX_EXPANSIONS: usize = 2_000_000;

pub type Edge = (NodeId, NodeId, RelationKind);

/// Node labels and explicit edges of a graph; the root and its implicit
/// edges are left out.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledForest {
    pub labels: BTreeMap<NodeId, String>,
    pub edges: BTreeSet<Edge>,
}

impl From<&ObjectGraph> for LabeledForest {
    fn from(g: &ObjectGraph) -> Self {
        Self {
            labels: g.nodes.iter().map(|(id, n)| (*id, n.label.clone())).collect(),
            edges: g.edges.iter().map(|e| (e.parent, e.child, e.kind)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    AddNode { id: NodeId, label: String },
    DeleteNode { id: NodeId },
    RelabelNode { id: NodeId, label: String },
    AddEdge { edge: Edge },
    DeleteEdge { edge: Edge },
    MoveEdge { from: Edge, to: Edge },
    RelabelEdge { from: Edge, to: Edge },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditScript {
    pub edits: Vec<Edit>,
    pub total_cost: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GedMode {
    Exact,
    Approx,
}

impl std::fmt::Display for GedMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GedMode::Exact => "exact",
            GedMode::Approx => "approx",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GedResult {
    pub cost: usize,
    pub mode: GedMode,
    pub script: EditScript,
    /// Each node of the first graph with its image in the second.
    pub mapping: Vec<(NodeId, Option<NodeId>)>,
}

/// Applies a script to a forest.
pub fn apply_script(g: &LabeledForest, script: &EditScript) -> LabeledForest {
    let mut out = g.clone();
    for e in &script.edits {
        match e {
            Edit::AddNode { id, label } | Edit::RelabelNode { id, label } => {
                out.labels.insert(*id, label.clone());
            }
            Edit::DeleteNode { id } => {
                out.labels.remove(id);
            }
            Edit::AddEdge { edge } => {
                out.edges.insert(*edge);
            }
            Edit::DeleteEdge { edge } => {
                out.edges.remove(edge);
            }
            Edit::MoveEdge { from, to } | Edit::RelabelEdge { from, to } => {
                out.edges.remove(from);
                out.edges.insert(*to);
            }
        }
    }
    out
}

struct Problem<'a> {
    a_ids: Vec<NodeId>,
    b_ids: Vec<NodeId>,
    a_labels: Vec<u32>,
    b_labels: Vec<u32>,
    a_edges: Vec<(usize, usize, RelationKind)>,
    b_edges: Vec<(usize, usize, RelationKind)>,
    b: &'a LabeledForest,
    n_labels: usize,
}

impl<'a> Problem<'a> {
    fn new(a: &'a LabeledForest, b: &'a LabeledForest) -> Self {
        let mut intern: HashMap<&str, u32> = HashMap::new();
        let mut id = |s: &'a str| {
            let n = intern.len() as u32;
            *intern.entry(s).or_insert(n)
        };
        let a_ids: Vec<NodeId> = a.labels.keys().copied().collect();
        let b_ids: Vec<NodeId> = b.labels.keys().copied().collect();
        let a_labels = a.labels.values().map(|l| id(l)).collect();
        let b_labels = b.labels.values().map(|l| id(l)).collect();
        let ai: HashMap<NodeId, usize> = a_ids.iter().enumerate().map(|(i, x)| (*x, i)).collect();
        let bi: HashMap<NodeId, usize> = b_ids.iter().enumerate().map(|(i, x)| (*x, i)).collect();
        Self {
            a_edges: a.edges.iter().map(|(p, c, k)| (ai[p], ai[c], *k)).collect(),
            b_edges: b.edges.iter().map(|(p, c, k)| (bi[p], bi[c], *k)).collect(),
            a_ids,
            b_ids,
            a_labels,
            b_labels,
            b,
            n_labels: intern.len(),
        }
    }

    /// Edge cost of a complete mapping and the chosen edge pairing.
    fn edge_cost(&self, map: &[Option<usize>]) -> (usize, Vec<Option<usize>>) {
        let weights: Vec<Vec<i64>> = self
            .a_edges
            .iter()
            .map(|&(p, c, k)| {
                self.b_edges
                    .iter()
                    .map(|&(q, d, l)| {
                        let miss = (map[p] != Some(q)) as i64
                            + (map[c] != Some(d)) as i64
                            + (k != l) as i64;
                        (2 - miss).max(0)
                    })
                    .collect()
            })
            .collect();
        let pairing = max_weight_assignment(&weights);
        let saved: i64 = pairing
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| weights[i][j]))
            .sum();
        let cost = self.a_edges.len() + self.b_edges.len() - saved as usize;
        (cost, pairing)
    }

    fn node_cost(&self, map: &[Option<usize>]) -> usize {
        let mut cost = 0;
        let mut used = 0;
        for (i, m) in map.iter().enumerate() {
            match m {
                None => cost += 1,
                Some(j) => {
                    used += 1;
                    if self.a_labels[i] != self.b_labels[*j] {
                        cost += 1;
                    }
                }
            }
        }
        cost + self.b_ids.len() - used
    }

    fn total(&self, map: &[Option<usize>]) -> usize {
        self.node_cost(map) + self.edge_cost(map).0
    }

    /// Lower bound on the node cost of the unassigned remainder.
    fn remaining_bound(&self, depth: usize, used: u64) -> usize {
        let mut counts = vec![0i32; self.n_labels];
        for &l in &self.a_labels[depth..] {
            counts[l as usize] += 1;
        }
        let r1 = self.a_labels.len() - depth;
        let mut r2 = 0;
        let mut common = 0;
        for (j, &l) in self.b_labels.iter().enumerate() {
            if used & (1 << j) == 0 {
                r2 += 1;
                if counts[l as usize] > 0 {
                    counts[l as usize] -= 1;
                    common += 1;
                }
            }
        }
        r1.max(r2) - common
    }

    fn script(&self, map: &[Option<usize>]) -> EditScript {
        let mut edits = Vec::new();
        let mut next = self.a_ids.iter().copied().max().unwrap_or(0) + 1;
        // Image of each b node in a's id space.
        let mut back: Vec<Option<NodeId>> = vec![None; self.b_ids.len()];
        for (i, m) in map.iter().enumerate() {
            if let Some(j) = m {
                back[*j] = Some(self.a_ids[i]);
            }
        }
        for (j, slot) in back.iter_mut().enumerate() {
            if slot.is_none() {
                *slot = Some(next);
                edits.push(Edit::AddNode {
                    id: next,
                    label: self.b.labels[&self.b_ids[j]].clone(),
                });
                next += 1;
            }
        }
        for (i, m) in map.iter().enumerate() {
            if let Some(j) = m {
                if self.a_labels[i] != self.b_labels[*j] {
                    edits.push(Edit::RelabelNode {
                        id: self.a_ids[i],
                        label: self.b.labels[&self.b_ids[*j]].clone(),
                    });
                }
            }
        }
        let (_, pairing) = self.edge_cost(map);
        let a_edge = |i: usize| {
            let (p, c, k) = self.a_edges[i];
            (self.a_ids[p], self.a_ids[c], k)
        };
        let target = |j: usize| {
            let (q, d, l) = self.b_edges[j];
            (back[q].expect("mapped"), back[d].expect("mapped"), l)
        };
        let mut paired_b = vec![false; self.b_edges.len()];
        let mut moves = Vec::new();
        let mut relabels = Vec::new();
        for (i, p) in pairing.iter().enumerate() {
            match p {
                None => edits.push(Edit::DeleteEdge { edge: a_edge(i) }),
                Some(j) => {
                    paired_b[*j] = true;
                    let from = a_edge(i);
                    let to = target(*j);
                    if from == to {
                        continue;
                    }
                    if from.2 != to.2 {
                        relabels.push(Edit::RelabelEdge { from, to });
                    } else {
                        moves.push(Edit::MoveEdge { from, to });
                    }
                }
            }
        }
        edits.extend(moves);
        edits.extend(relabels);
        for (j, paired) in paired_b.iter().enumerate() {
            if !paired {
                edits.push(Edit::AddEdge { edge: target(j) });
            }
        }
        for (i, m) in map.iter().enumerate() {
            if m.is_none() {
                edits.push(Edit::DeleteNode { id: self.a_ids[i] });
            }
        }
        let total_cost = edits.len();
        EditScript { edits, total_cost }
    }

    /// Greedy mapping: seed pairs first, then same-label nodes in id order.
    fn greedy(&self, seed: &[(NodeId, NodeId)]) -> Vec<Option<usize>> {
        let mut map = vec![None; self.a_ids.len()];
        let mut used = vec![false; self.b_ids.len()];
        for (x, y) in seed {
            let (Some(i), Some(j)) = (
                self.a_ids.iter().position(|v| v == x),
                self.b_ids.iter().position(|v| v == y),
            ) else {
                continue;
            };
            if map[i].is_none() && !used[j] {
                map[i] = Some(j);
                used[j] = true;
            }
        }
        for (m, label) in map.iter_mut().zip(&self.a_labels) {
            if m.is_some() {
                continue;
            }
            if let Some(j) = (0..self.b_ids.len()).find(|&j| !used[j] && *label == self.b_labels[j]) {
                *m = Some(j);
                used[j] = true;
            }
        }
        map
    }

    /// Best-first search over mappings, assigning a's nodes in id order.
    /// Returns `None` if the expansion budget runs out.
    fn exact(&self, incumbent: (usize, Vec<Option<usize>>)) -> Option<(usize, Vec<Option<usize>>)> {
        let n = self.a_ids.len();
        let edge_bound = self.a_edges.len().abs_diff(self.b_edges.len());
        let (best_cost, best_map) = incumbent;
        // (f, depth descending, sequence) keeps the order deterministic.
        let mut heap = BinaryHeap::new();
        let mut states: Vec<(Vec<Option<usize>>, u64, usize, bool)> = Vec::new();
        let push = |heap: &mut BinaryHeap<_>, states: &mut Vec<_>, f: usize, st: (Vec<Option<usize>>, u64, usize, bool)| {
            let depth = st.0.len();
            states.push(st);
            heap.push(Reverse((f, Reverse(depth), states.len() - 1)));
        };
        let h0 = self.remaining_bound(0, 0) + edge_bound;
        push(&mut heap, &mut states, h0, (Vec::new(), 0, 0, false));
        let mut expansions = 0;
        while let Some(Reverse((f, _, idx))) = heap.pop() {
            if f >= best_cost {
                break;
            }
            let (map, used, g, complete) = std::mem::take(&mut states[idx]);
            if complete {
                return Some((f, map));
            }
            expansions += 1;
            if expansions > MAX_EXPANSIONS {
                return None;
            }
            let depth = map.len();
            if depth == n {
                let total = self.total(&map);
                if total < best_cost {
                    // Any completed state costs at least its true total.
                    push(&mut heap, &mut states, total, (map, used, g, true));
                }
                continue;
            }
            let mut children: Vec<(Option<usize>, usize, u64)> = Vec::new();
            children.push((None, g + 1, used));
            for j in 0..self.b_ids.len() {
                if used & (1 << j) == 0 {
                    let c = g + (self.a_labels[depth] != self.b_labels[j]) as usize;
                    children.push((Some(j), c, used | (1 << j)));
                }
            }
            for (choice, g2, used2) in children {
                let f2 = g2 + self.remaining_bound(depth + 1, used2) + edge_bound;
                if f2 < best_cost {
                    let mut m2 = map.clone();
                    m2.push(choice);
                    push(&mut heap, &mut states, f2, (m2, used2, g2, false));
                }
            }
            if heap.is_empty() {
                break;
            }
        }
        // Nothing beat the incumbent.
        Some((best_cost, best_map))
    }
}

fn result(p: &Problem, map: Vec<Option<usize>>, cost: usize, mode: GedMode) -> GedResult {
    let script = p.script(&map);
    debug_assert_eq!(script.total_cost, cost);
    GedResult {
        cost,
        mode,
        script,
        mapping: p
            .a_ids
            .iter()
            .zip(&map)
            .map(|(a, m)| (*a, m.map(|j| p.b_ids[j])))
            .collect(),
    }
}

/// Edit distance from `a` to `b`. `seed` pairs nodes believed to be the
/// same object; it anchors the initial upper bound and, above
/// `EXACT_NODE_LIMIT` nodes, the greedy bounded mode.
pub fn forest_edit_distance(
    a: &LabeledForest,
    b: &LabeledForest,
    seed: &[(NodeId, NodeId)],
) -> GedResult {
    let p = Problem::new(a, b);
    let greedy = p.greedy(seed);
    let greedy_cost = p.total(&greedy);
    if a.labels.len().max(b.labels.len()) > EXACT_NODE_LIMIT {
        return result(&p, greedy, greedy_cost, GedMode::Approx);
    }
    match p.exact((greedy_cost, greedy.clone())) {
        Some((cost, map)) => result(&p, map, cost, GedMode::Exact),
        None => result(&p, greedy, greedy_cost, GedMode::Approx),
    }
}

/// Edit distance from a built graph to the ground truth, seeded with the
/// recovery matching.
pub fn graph_edit_distance(built: &ObjectGraph, gt: &ObjectGraph) -> GedResult {
    let seed = match_nodes(built, gt).matched;
    forest_edit_distance(&LabeledForest::from(built), &LabeledForest::from(gt), &seed)
}
