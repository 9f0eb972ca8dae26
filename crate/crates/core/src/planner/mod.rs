//! Depth-first graph serialization and next-action planning.

mod llm;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, ObjectGraph, ROOT_ID, ROOT_LABEL};
use crate::scene::{InteractionState, ObjectKind, Phase, RelationKind, SkillKind, TaskKind};
use crate::semantics::{is_part_label, kind_for_label};
use crate::world::SkillCommand;

pub use llm::{
    parse_reply, plan_next_llm, HttpTransport, LlmDecision, PromptConfig, PromptError,
    ScriptedTransport, Transport, TransportError, MAX_EXAMPLES,
};

/// Number of perimeter scan waypoints.
pub const SCAN_WAYPOINTS: usize = 8;
/// Planner-level attempts after which a (skill, target) pair is abandoned.
pub const MAX_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializedLine {
    pub depth: usize,
    pub node_id: NodeId,
    pub parent: Option<NodeId>,
    pub label: String,
    pub state: Option<InteractionState>,
    pub relation: Option<RelationKind>,
    pub skills: Vec<SkillKind>,
}

impl SerializedLine {
    pub fn render(&self) -> String {
        let state = self.state.map_or("none".to_string(), |s| s.to_string());
        let rel = self.relation.map_or("none".to_string(), |r| r.to_string());
        let skills: Vec<&str> = self.skills.iter().map(|s| s.name()).collect();
        format!(
            "{}{} (id={}, state={}, rel={}, actions=[{}])",
            "  ".repeat(self.depth),
            self.label,
            self.node_id,
            state,
            rel,
            skills.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializedGraph {
    pub lines: Vec<SerializedLine>,
}

impl SerializedGraph {
    pub fn text(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            writeln!(out, "{}", l.render()).expect("write to string");
        }
        out
    }

    pub fn line(&self, id: NodeId) -> Option<&SerializedLine> {
        self.lines.iter().find(|l| l.node_id == id)
    }

    fn children(&self, id: NodeId) -> impl Iterator<Item = &SerializedLine> {
        self.lines.iter().filter(move |l| l.parent == Some(id))
    }
}

/// Preorder depth-first serialization from the root, children in
/// ascending id order.
pub fn serialize_graph(graph: &ObjectGraph) -> SerializedGraph {
    let mut lines = vec![SerializedLine {
        depth: 0,
        node_id: ROOT_ID,
        parent: None,
        label: ROOT_LABEL.to_string(),
        state: None,
        relation: None,
        skills: Vec::new(),
    }];
    let mut stack: Vec<(NodeId, usize)> = graph
        .children(ROOT_ID)
        .into_iter()
        .rev()
        .map(|c| (c, 1))
        .collect();
    while let Some((id, depth)) = stack.pop() {
        let n = graph.node(id).expect("child exists");
        lines.push(SerializedLine {
            depth,
            node_id: id,
            parent: graph.parent(id),
            label: n.label.clone(),
            state: Some(n.state),
            relation: graph.relation_to_parent(id),
            skills: n.grounded_skills.clone(),
        });
        for c in graph.children(id).into_iter().rev() {
            stack.push((c, depth + 1));
        }
    }
    SerializedGraph { lines }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HistoryEntry {
    Skill { command: SkillCommand, success: bool },
    Scan { waypoint: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum PlannerDecision {
    Skill(SkillCommand),
    Scan(usize),
    Done,
}

/// World-derived facts the rule policy reads besides the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanContext {
    pub task: TaskKind,
    pub unknown_fraction: f64,
    pub frontier_threshold: f64,
    /// Blocker nodes with unknown space in their shadow.
    pub blockers_with_unknown: BTreeSet<NodeId>,
    pub waypoints: usize,
}

impl Default for PlanContext {
    fn default() -> Self {
        Self {
            task: TaskKind::Explore,
            unknown_fraction: 1.0,
            frontier_threshold: 0.0,
            blockers_with_unknown: BTreeSet::new(),
            waypoints: SCAN_WAYPOINTS,
        }
    }
}

fn failed_attempts(history: &[HistoryEntry], cmd: SkillCommand) -> usize {
    history
        .iter()
        .filter(|h| matches!(h, HistoryEntry::Skill { command, success: false } if *command == cmd))
        .count()
}

fn succeeded(history: &[HistoryEntry], cmd: SkillCommand) -> bool {
    history
        .iter()
        .any(|h| matches!(h, HistoryEntry::Skill { command, success: true } if *command == cmd))
}

/// Whether a node sits under an ancestor whose contents are still hidden.
fn exposed(ser: &SerializedGraph, line: &SerializedLine) -> bool {
    let mut cur = line.parent;
    while let Some(p) = cur {
        let Some(pl) = ser.line(p) else { break };
        if pl.state.is_some_and(|s| crate::graph::is_unexplored(s.phase)) {
            return false;
        }
        cur = pl.parent;
    }
    true
}

/// Deterministic rule policy. Lower rules win; within a rule the lowest
/// node id wins. A (skill, target) pair that failed `MAX_ATTEMPTS` times
/// is abandoned.
pub fn plan_next_rule(
    ser: &SerializedGraph,
    history: &[HistoryEntry],
    ctx: &PlanContext,
) -> PlannerDecision {
    let mut nodes: Vec<&SerializedLine> = ser.lines.iter().filter(|l| l.node_id != ROOT_ID).collect();
    nodes.sort_by_key(|l| l.node_id);
    let phase = |l: &SerializedLine| l.state.map(|s| s.phase);
    let usable = |skill: SkillKind, l: &SerializedLine| {
        let cmd = SkillCommand {
            skill,
            target: l.node_id,
        };
        failed_attempts(history, cmd) < MAX_ATTEMPTS && !succeeded(history, cmd)
    };

    type Rule<'a> = Box<dyn Fn(&SerializedLine) -> Option<SkillKind> + 'a>;
    let rules: Vec<Rule> = vec![
        Box::new(|l| {
            let has_handle = ser
                .children(l.node_id)
                .any(|c| c.relation == Some(RelationKind::Of) && is_part_label(&c.label));
            (kind_for_label(&l.label) == ObjectKind::Container
                && phase(l) == Some(Phase::Closed)
                && has_handle)
                .then_some(SkillKind::Open)
        }),
        Box::new(|l| {
            (kind_for_label(&l.label) == ObjectKind::OpenBox && phase(l) == Some(Phase::Upright))
                .then_some(SkillKind::Flip)
        }),
        Box::new(|l| {
            (kind_for_label(&l.label) == ObjectKind::CoveredPile
                && phase(l) == Some(Phase::Covered))
            .then_some(SkillKind::Lift)
        }),
        Box::new(|l| {
            (kind_for_label(&l.label) == ObjectKind::MovableBlocker
                && phase(l) == Some(Phase::InPlace)
                && ctx.blockers_with_unknown.contains(&l.node_id))
            .then_some(SkillKind::Push)
        }),
        Box::new(|l| {
            (kind_for_label(&l.label) == ObjectKind::FurnitureWithUnderspace)
                .then_some(SkillKind::Sit)
        }),
        Box::new(|l| {
            let TaskKind::Collect { targets } = &ctx.task else {
                return None;
            };
            (targets.contains(&l.label)
                && l.state.is_some_and(|s| !s.collected)
                && exposed(ser, l))
            .then_some(SkillKind::Collect)
        }),
    ];

    for rule in &rules {
        for l in &nodes {
            if let Some(skill) = rule(l) {
                if usable(skill, l) {
                    return PlannerDecision::Skill(SkillCommand {
                        skill,
                        target: l.node_id,
                    });
                }
            }
        }
    }
    let scans = history
        .iter()
        .filter(|h| matches!(h, HistoryEntry::Scan { .. }))
        .count();
    if ctx.unknown_fraction > ctx.frontier_threshold && scans < ctx.waypoints {
        return PlannerDecision::Scan(scans);
    }
    PlannerDecision::Done
}
