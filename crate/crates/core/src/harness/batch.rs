//! Batches of episodes, the metrics table and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{run_episode, EpisodeLog, EpisodeMetrics, PlannerKind, RunConfig};
use crate::builder::BuilderConfig;
use crate::metrics::{FailureClass, FailureCounts};
use crate::planner::Transport;
use crate::scene::{bundled_scene, parse_scene, SceneError};
use crate::world::{FaultProfile, DEFAULT_RAY_BUDGET};

pub const CSV_HEADER: &str =
    "scene,seed,planner,success,object_recovery,ged,ged_mode,unknown_fraction,steps,failure_class";

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("repeats must be at least 1")]
    NoRepeats,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("suite: {0}")]
    Suite(#[from] serde_json::Error),
    #[error("scene {name}: {source}")]
    Scene { name: String, source: SceneError },
    #[error("scene {0} is neither a file nor a bundled scene")]
    UnknownScene(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BatchError + '_ {
    move |source| BatchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn default_steps() -> usize {
    200
}

fn default_budget() -> usize {
    DEFAULT_RAY_BUDGET
}

/// Suite file: scenes (paths or bundled names) and shared settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub scenes: Vec<String>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_planner")]
    pub planner: PlannerKind,
    #[serde(default)]
    pub faults: FaultProfile,
    #[serde(default)]
    pub builder: BuilderConfig,
    #[serde(default = "default_budget")]
    pub ray_budget: usize,
    #[serde(default = "default_steps")]
    pub max_steps: usize,
}

fn default_planner() -> PlannerKind {
    PlannerKind::Rule
}

/// Loads a scene by path, falling back to the bundled scene of that name.
pub fn load_scene(name: &str, base: &Path) -> Result<(String, Arc<crate::scene::SceneSpec>), BatchError> {
    let path = base.join(name);
    if path.is_file() {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let spec = parse_scene(&text).map_err(|source| BatchError::Scene {
            name: name.into(),
            source,
        })?;
        let stem = path
            .file_stem()
            .map_or_else(|| name.to_string(), |s| s.to_string_lossy().into_owned());
        return Ok((stem, Arc::new(spec)));
    }
    bundled_scene(name)
        .map(|s| (name.to_string(), Arc::new(s)))
        .ok_or_else(|| BatchError::UnknownScene(name.into()))
}

impl Suite {
    pub fn load(path: &Path) -> Result<Self, BatchError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// One config per scene, seeded at `base_seed`. Relative scene paths
    /// resolve against `base`.
    pub fn configs(&self, base: &Path) -> Result<Vec<RunConfig>, BatchError> {
        self.scenes
            .iter()
            .map(|name| {
                let (scene_name, scene) = load_scene(name, base)?;
                let mut cfg = RunConfig::new(scene_name, scene);
                cfg.seed = self.base_seed;
                cfg.planner = self.planner;
                cfg.faults = self.faults.clone();
                cfg.builder = self.builder.clone();
                cfg.ray_budget = self.ray_budget;
                cfg.max_steps = self.max_steps;
                Ok(cfg)
            })
            .collect()
    }
}

/// One row of the metrics table. `error` is set when the episode could not
/// run at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub metrics: EpisodeMetrics,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct BatchResult {
    pub rows: Vec<BatchRow>,
    pub logs: Vec<EpisodeLog>,
    /// Prompt examples given to the llm planner, if it was used.
    pub prompt_examples: Option<usize>,
}

/// Runs every config `repeats` times with seeds `seed..seed + repeats` and
/// random start poses. Episodes run in parallel; rows keep suite order.
/// `transport` supplies a fresh transport for each llm episode.
pub fn run_batch<F>(
    suite: &[RunConfig],
    repeats: usize,
    transport: F,
) -> Result<BatchResult, BatchError>
where
    F: Fn() -> Result<Box<dyn Transport>, String> + Sync,
{
    if repeats == 0 {
        return Err(BatchError::NoRepeats);
    }
    let jobs: Vec<RunConfig> = suite
        .iter()
        .flat_map(|c| {
            (0..repeats as u64).map(move |r| {
                let mut c = c.clone();
                c.seed += r;
                c.randomize_start = true;
                c
            })
        })
        .collect();
    let outcomes: Vec<(BatchRow, EpisodeLog)> = jobs
        .par_iter()
        .map(|cfg| {
            let mut boxed = match cfg.planner {
                PlannerKind::Rule => None,
                PlannerKind::Llm { .. } => match transport() {
                    Ok(t) => Some(t),
                    Err(e) => return errored(cfg, e),
                },
            };
            let t: Option<&mut dyn Transport> = match boxed.as_mut() {
                Some(b) => Some(b.as_mut()),
                None => None,
            };
            match run_episode(cfg, t) {
                Ok(r) => (
                    BatchRow {
                        metrics: r.metrics,
                        error: None,
                    },
                    r.log,
                ),
                Err(e) => errored(cfg, e.to_string()),
            }
        })
        .collect();
    let prompt_examples = suite.iter().find_map(|c| match c.planner {
        PlannerKind::Llm { examples } => Some(examples),
        PlannerKind::Rule => None,
    });
    let (rows, logs) = outcomes.into_iter().unzip();
    Ok(BatchResult {
        rows,
        logs,
        prompt_examples,
    })
}

fn errored(cfg: &RunConfig, error: String) -> (BatchRow, EpisodeLog) {
    (
        BatchRow {
            metrics: EpisodeMetrics {
                scene: cfg.scene_name.clone(),
                seed: cfg.seed,
                planner: cfg.planner.to_string(),
                success: false,
                object_recovery: 0.0,
                ged: 0,
                ged_mode: crate::metrics::GedMode::Exact,
                unknown_fraction: 1.0,
                steps: 0,
                failure_class: None,
                timed_out: false,
            },
            error: Some(error),
        },
        EpisodeLog::default(),
    )
}

/// Mean success, recovery, GED, unknown fraction and steps of a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scene: String,
    pub planner: String,
    pub episodes: usize,
    pub success: f64,
    pub object_recovery: f64,
    pub ged: f64,
    pub unknown_fraction: f64,
    pub steps: f64,
}

fn aggregate(scene: &str, planner: &str, rows: &[&BatchRow]) -> Aggregate {
    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    Aggregate {
        scene: scene.into(),
        planner: planner.into(),
        episodes: rows.len(),
        success: mean(&|m| if m.success { 1.0 } else { 0.0 }),
        object_recovery: mean(&|m| m.object_recovery),
        ged: mean(&|m| m.ged as f64),
        unknown_fraction: mean(&|m| m.unknown_fraction),
        steps: mean(&|m| m.steps as f64),
    }
}

/// Per-scene aggregates in order of first appearance, then the overall one
/// (scene `all`).
pub fn aggregates(rows: &[BatchRow]) -> Vec<Aggregate> {
    if rows.is_empty() {
        return Vec::new();
    }
    let mut groups: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.metrics.scene.clone(), r.metrics.planner.clone());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut out: Vec<Aggregate> = groups
        .iter()
        .map(|(s, p)| {
            let members: Vec<&BatchRow> = rows
                .iter()
                .filter(|r| &r.metrics.scene == s && &r.metrics.planner == p)
                .collect();
            aggregate(s, p, &members)
        })
        .collect();
    let mut planners: Vec<&str> = groups.iter().map(|g| g.1.as_str()).collect();
    planners.dedup();
    let planner = if planners.len() == 1 { planners[0] } else { "mixed" };
    out.push(aggregate("all", planner, &rows.iter().collect::<Vec<_>>()));
    out
}

pub fn csv_row(m: &EpisodeMetrics, error: Option<&str>) -> String {
    let class = match (error, m.failure_class) {
        (Some(_), _) => "error".to_string(),
        (None, Some(c)) => c.to_string(),
        (None, None) => String::new(),
    };
    format!(
        "{},{},{},{},{:.4},{},{},{:.4},{},{}",
        m.scene,
        m.seed,
        m.planner,
        m.success,
        m.object_recovery,
        m.ged,
        m.ged_mode,
        m.unknown_fraction,
        m.steps,
        class
    )
}

/// Episode rows followed by aggregate rows (seed column `mean`).
pub fn metrics_csv(rows: &[BatchRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&csv_row(&r.metrics, r.error.as_deref()));
        s.push('\n');
    }
    for a in aggregates(rows) {
        writeln!(
            s,
            "{},mean,{},{:.4},{:.4},{:.4},,{:.4},{:.2},",
            a.scene, a.planner, a.success, a.object_recovery, a.ged, a.unknown_fraction, a.steps
        )
        .expect("writing to a string");
    }
    s
}

pub fn failure_counts(rows: &[BatchRow]) -> FailureCounts {
    let mut c = FailureCounts::default();
    for r in rows {
        if let Some(class) = r.metrics.failure_class {
            c.add(class);
        }
    }
    c
}

/// Plain-text summary with the failure breakdown.
pub fn summary_text(rows: &[BatchRow], prompt_examples: Option<usize>) -> String {
    let c = failure_counts(rows);
    let failed = rows.iter().filter(|r| !r.metrics.success).count();
    let errors = rows.iter().filter(|r| r.error.is_some()).count();
    let mut s = String::new();
    writeln!(s, "episodes: {}", rows.len()).unwrap();
    writeln!(s, "successes: {}", rows.len() - failed).unwrap();
    writeln!(s, "failures: {failed}").unwrap();
    if let Some(n) = prompt_examples {
        writeln!(s, "prompt examples: {n}").unwrap();
    }
    writeln!(s).unwrap();
    writeln!(s, "failure breakdown").unwrap();
    for (class, n) in [
        (FailureClass::Perception, c.perception),
        (FailureClass::Decision, c.decision),
        (FailureClass::Action, c.action),
    ] {
        writeln!(s, "  {class}: {n}").unwrap();
    }
    if errors > 0 {
        writeln!(s, "  error: {errors}").unwrap();
    }
    s
}

pub fn episode_file_name(m: &EpisodeMetrics) -> String {
    format!("{}_{}_{}.jsonl", m.scene, m.planner, m.seed)
}

/// Writes `metrics.csv`, `summary.txt` and `episodes/*.jsonl` under `dir`.
pub fn write_report(dir: &Path, batch: &BatchResult) -> Result<(), BatchError> {
    let episodes = dir.join("episodes");
    fs::create_dir_all(&episodes).map_err(io_err(&episodes))?;
    let csv = dir.join("metrics.csv");
    fs::write(&csv, metrics_csv(&batch.rows)).map_err(io_err(&csv))?;
    let summary = dir.join("summary.txt");
    fs::write(&summary, summary_text(&batch.rows, batch.prompt_examples))
        .map_err(io_err(&summary))?;
    for (row, log) in batch.rows.iter().zip(&batch.logs) {
        if log.events.is_empty() {
            continue;
        }
        let path = episodes.join(episode_file_name(&row.metrics));
        fs::write(&path, log.to_jsonl()).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Reads every episode log in `dir` (sorted by file name).
pub fn read_logs(dir: &Path) -> Result<Vec<(PathBuf, EpisodeLog)>, BatchError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let f = fs::File::open(&p).map_err(io_err(&p))?;
            let log = EpisodeLog::read_jsonl(std::io::BufReader::new(f)).map_err(|e| {
                BatchError::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
                }
            })?;
            Ok((p, log))
        })
        .collect()
}
