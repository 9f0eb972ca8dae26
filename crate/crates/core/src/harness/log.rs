//! Episode event log: JSON lines, and graph reconstruction from them.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::builder::{apply_delta, estimate_normals, FuseDelta};
use crate::geometry::{CameraPose, Point, Pose2D};
use crate::graph::{GraphError, NodeId, ObjectGraph, ObjectNode, RelationEdge};
use crate::metrics::{Defect, FailureClass, GedMode};
use crate::planner::PlannerDecision;
use crate::scene::{InteractionState, SkillKind};
use crate::world::{FaultProfile, SkillCommand};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub label: String,
    pub points: usize,
    pub source: usize,
    /// Best association score against the existing nodes.
    pub best_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub scene: String,
    pub seed: u64,
    pub planner: String,
    pub success: bool,
    pub object_recovery: f64,
    pub ged: usize,
    pub ged_mode: GedMode,
    pub unknown_fraction: f64,
    pub steps: usize,
    pub failure_class: Option<FailureClass>,
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Header {
        scene: String,
        seed: u64,
        planner: String,
        prompt_examples: Option<usize>,
        faults: FaultProfile,
        tau: f64,
        resolution: f64,
        ray_budget: usize,
        max_steps: usize,
        start: Pose2D,
    },
    Observation {
        step: usize,
        camera: CameraPose,
        points: usize,
        free_rays: usize,
        unknown_fraction: f64,
    },
    Detections {
        step: usize,
        detections: Vec<DetectionSummary>,
    },
    /// A detection cut off by the image edge, left out of association.
    Truncated {
        step: usize,
        label: String,
        points: usize,
    },
    Fault {
        step: usize,
        kind: String,
        detail: String,
    },
    NodeAdded {
        step: usize,
        id: NodeId,
        label: String,
        state: InteractionState,
        skills: Vec<SkillKind>,
        points: Vec<Point>,
    },
    NodeFused {
        step: usize,
        id: NodeId,
        delta: FuseDelta,
    },
    /// The acted-on node was matched to a detection regardless of score.
    Anchored {
        step: usize,
        id: NodeId,
        score: f64,
    },
    NodeMoved {
        step: usize,
        id: NodeId,
        displacement: [f64; 3],
    },
    NodeStateChanged {
        step: usize,
        id: NodeId,
        state: InteractionState,
        explored: bool,
    },
    EdgeAdded {
        step: usize,
        edge: RelationEdge,
    },
    Snapshot {
        step: usize,
        text: String,
    },
    Decision {
        step: usize,
        decision: PlannerDecision,
        reply: Option<String>,
        failure: Option<String>,
    },
    Navigation {
        step: usize,
        goal: Pose2D,
        path_length: Option<f64>,
        error: Option<String>,
    },
    Skill {
        step: usize,
        command: SkillCommand,
        object: Option<String>,
        success: bool,
        attempts: u32,
        revealed_voxels: usize,
        error: Option<String>,
    },
    Defect {
        defect: Defect,
    },
    Timeout {
        step: usize,
    },
    Final {
        metrics: EpisodeMetrics,
        graph: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub events: Vec<LogEvent>,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("replay: {0}")]
    Graph(#[from] GraphError),
    #[error("replay: node {0} is referenced before it is added")]
    UnknownNode(NodeId),
}

impl EpisodeLog {
    pub fn push(&mut self, e: LogEvent) {
        self.events.push(e);
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, LogError> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(
                serde_json::from_str(&line).map_err(|source| LogError::Parse {
                    line: i + 1,
                    source,
                })?,
            );
        }
        Ok(Self { events })
    }

    pub fn final_metrics(&self) -> Option<&EpisodeMetrics> {
        self.events.iter().rev().find_map(|e| match e {
            LogEvent::Final { metrics, .. } => Some(metrics),
            _ => None,
        })
    }

    pub fn defects(&self) -> Vec<Defect> {
        self.events
            .iter()
            .filter_map(|e| match e {
                LogEvent::Defect { defect } => Some(defect.clone()),
                _ => None,
            })
            .collect()
    }

    /// Rebuilds the object graph from the recorded graph edits.
    pub fn replay(&self, resolution: f64) -> Result<ObjectGraph, LogError> {
        let mut g = ObjectGraph::new();
        for e in &self.events {
            match e {
                LogEvent::NodeAdded {
                    id,
                    label,
                    state,
                    skills,
                    points,
                    ..
                } => g.insert_node(ObjectNode {
                    node_id: *id,
                    label: label.clone(),
                    normals: estimate_normals(points, resolution),
                    points: points.clone(),
                    state: *state,
                    explored: false,
                    grounded_skills: skills.clone(),
                })?,
                LogEvent::NodeFused { id, delta, .. } => {
                    let n = g.node_mut(*id).ok_or(LogError::UnknownNode(*id))?;
                    apply_delta(n, delta, resolution);
                }
                LogEvent::NodeMoved {
                    id, displacement, ..
                } => {
                    let n = g.node_mut(*id).ok_or(LogError::UnknownNode(*id))?;
                    super::shift_node(n, displacement);
                }
                LogEvent::NodeStateChanged {
                    id,
                    state,
                    explored,
                    ..
                } => {
                    let n = g.node_mut(*id).ok_or(LogError::UnknownNode(*id))?;
                    n.state = *state;
                    n.explored = *explored;
                }
                LogEvent::EdgeAdded { edge, .. } => g.add_edge(*edge)?,
                _ => {}
            }
        }
        Ok(g)
    }
}
