//! Simulator, graph builder, planners and metrics for desk-scale
//! interactive exploration with an actionable relational object graph.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod graph;
pub mod scene;
pub mod world;
pub mod builder;
pub mod detector;
pub mod semantics;
pub mod planner;
pub mod metrics;
pub mod harness;
