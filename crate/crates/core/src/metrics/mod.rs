//! Episode metrics: object recovery, graph edit distance, success,
//! unknown space and failure classification.

mod failures;
mod ged;

use std::collections::BTreeSet;

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, ObjectGraph};
use crate::scene::SkillKind;
use crate::world::KnownSpaceGrid;

pub use failures::{classify_episode, Defect, FailureClass, FailureCounts};
pub use ged::{
    apply_script, forest_edit_distance, graph_edit_distance, Edit, EditScript, GedMode, GedResult,
    LabeledForest, EXACT_NODE_LIMIT,
};

/// Largest centroid distance at which a built node recovers a GT node.
pub const MATCH_DISTANCE: f64 = 0.15;

/// Maximum-weight one-to-one assignment. Returns, for each row, the chosen
/// column if its weight is positive.
pub(crate) fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let transpose = rows > cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    let mut m = Matrix::new(r, c, 0i64);
    for (i, row) in weights.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            let (a, b) = if transpose { (j, i) } else { (i, j) };
            m[(a, b)] = w;
        }
    }
    let (_, assign) = kuhn_munkres(&m);
    let mut out = vec![None; rows];
    for (a, &b) in assign.iter().enumerate() {
        let (i, j) = if transpose { (b, a) } else { (a, b) };
        if weights[i][j] > 0 {
            out[i] = Some(j);
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// (built node, GT node) pairs.
    pub matched: Vec<(NodeId, NodeId)>,
    pub unmatched_built: Vec<NodeId>,
    pub unmatched_gt: Vec<NodeId>,
}

/// Maximum one-to-one matching of built nodes to GT nodes with equal
/// labels and centroids at most `MATCH_DISTANCE` apart; among maximum
/// matchings, the smallest total centroid distance.
pub fn match_nodes(built: &ObjectGraph, gt: &ObjectGraph) -> MatchReport {
    let b: Vec<_> = built
        .nodes
        .values()
        .filter_map(|n| n.centroid().map(|c| (n.node_id, n.label.as_str(), c)))
        .collect();
    let g: Vec<_> = gt
        .nodes
        .values()
        .filter_map(|n| n.centroid().map(|c| (n.node_id, n.label.as_str(), c)))
        .collect();
    // Each qualifying pair outweighs any total distance saving.
    let big = 1_000_000 * (b.len().max(g.len()) as i64 + 1);
    let weights: Vec<Vec<i64>> = b
        .iter()
        .map(|(_, lb, cb)| {
            g.iter()
                .map(|(_, lg, cg)| {
                    let d = (cb - cg).norm();
                    if lb == lg && d <= MATCH_DISTANCE {
                        big - (d * 1e6).round() as i64
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let assign = max_weight_assignment(&weights);
    let mut report = MatchReport::default();
    let mut used = BTreeSet::new();
    for (i, a) in assign.iter().enumerate() {
        match a {
            Some(j) => {
                report.matched.push((b[i].0, g[*j].0));
                used.insert(*j);
            }
            None => report.unmatched_built.push(b[i].0),
        }
    }
    report.unmatched_built.extend(
        built
            .nodes
            .values()
            .filter(|n| n.points.is_empty())
            .map(|n| n.node_id),
    );
    for (j, x) in g.iter().enumerate() {
        if !used.contains(&j) {
            report.unmatched_gt.push(x.0);
        }
    }
    report
        .unmatched_gt
        .extend(gt.nodes.values().filter(|n| n.points.is_empty()).map(|n| n.node_id));
    report.unmatched_built.sort();
    report.unmatched_gt.sort();
    report
}

/// Fraction of GT nodes recovered; 1.0 when there are none.
pub fn object_recovery(report: &MatchReport) -> f64 {
    let total = report.matched.len() + report.unmatched_gt.len();
    if total == 0 {
        1.0
    } else {
        report.matched.len() as f64 / total as f64
    }
}

/// Whether every required (skill, object) pair was executed successfully.
pub fn episode_success(
    required: &[(SkillKind, usize)],
    succeeded: &BTreeSet<(SkillKind, usize)>,
) -> bool {
    required.iter().all(|r| succeeded.contains(r))
}

pub fn unknown_fraction(grid: &KnownSpaceGrid) -> f64 {
    grid.unknown_fraction()
}
