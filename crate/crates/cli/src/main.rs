use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use curiosim::builder::BuilderConfig;
use curiosim::graph::ObjectGraph;
use curiosim::harness::batch::{
    load_scene, metrics_csv, read_logs, run_batch, summary_text, write_report, BatchResult,
    BatchRow, Suite,
};
use curiosim::harness::{run_episode, EpisodeLog, LogEvent, PlannerKind, RunConfig};
use curiosim::metrics::{forest_edit_distance, graph_edit_distance, GedResult, LabeledForest};
use curiosim::planner::{serialize_graph, HttpTransport, Transport};
use curiosim::world::FaultProfile;

#[derive(Parser)]
#[command(name = "curiosim", version, about = "Desk-scale interactive exploration simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its report.
    Run {
        /// Scene file or bundled scene name.
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// rule, llm or llm-<N>ex
        #[arg(long, default_value = "rule")]
        planner: PlannerKind,
        /// JSON fault profile.
        #[arg(long)]
        faults: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Association threshold.
        #[arg(long)]
        tau: Option<f64>,
        /// Voxel edge length in meters.
        #[arg(long)]
        resolution: Option<f64>,
        #[arg(long)]
        ray_budget: Option<usize>,
    },
    /// Run every scene of a suite `repeats` times.
    Batch {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay episode logs, check them against their final graphs and
    /// print the metrics table.
    Eval {
        #[arg(long)]
        logs: PathBuf,
    },
    /// Edit distance between two graphs (object graph or labeled forest JSON).
    Ged {
        #[arg(long = "graph", num_args = 1, required = true)]
        graphs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run {
            scene,
            seed,
            planner,
            faults,
            out,
            max_steps,
            tau,
            resolution,
            ray_budget,
        } => {
            let cwd = std::env::current_dir()?;
            let (name, spec) = load_scene(&scene, &cwd)?;
            let mut cfg = RunConfig::new(name, spec);
            cfg.seed = seed;
            cfg.planner = planner;
            if let Some(path) = faults {
                let text = fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                cfg.faults = serde_json::from_str::<FaultProfile>(&text)
                    .with_context(|| format!("parsing {}", path.display()))?;
            }
            if let Some(n) = max_steps {
                cfg.max_steps = n;
            }
            if let Some(t) = tau {
                cfg.builder.tau = t;
            }
            if let Some(r) = resolution {
                cfg.builder.resolution = r;
            }
            if let Some(b) = ray_budget {
                cfg.ray_budget = b;
            }
            run(&cfg, &out)
        }
        Command::Batch {
            suite,
            repeats,
            out,
        } => {
            let base = suite.parent().unwrap_or(Path::new("."));
            let configs = Suite::load(&suite)?.configs(base)?;
            let batch = run_batch(&configs, repeats, || {
                HttpTransport::from_env()
                    .map(|t| Box::new(t) as Box<dyn Transport>)
                    .map_err(|e| e.to_string())
            })?;
            write_report(&out, &batch)?;
            print!("{}", summary_text(&batch.rows, batch.prompt_examples));
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { logs } => eval(&logs),
        Command::Ged { graphs } => {
            if graphs.len() != 2 {
                bail!("expected exactly two --graph arguments, got {}", graphs.len());
            }
            let result = ged(&graphs[0], &graphs[1])?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let mut http = match cfg.planner {
        PlannerKind::Rule => None,
        PlannerKind::Llm { .. } => Some(HttpTransport::from_env()?),
    };
    let transport = http.as_mut().map(|t| t as &mut dyn Transport);
    let result = run_episode(cfg, transport)?;
    let graph_json = serde_json::to_string_pretty(&result.graph)?;
    let batch = BatchResult {
        rows: vec![BatchRow {
            metrics: result.metrics,
            error: None,
        }],
        logs: vec![result.log],
        prompt_examples: match cfg.planner {
            PlannerKind::Llm { examples } => Some(examples),
            PlannerKind::Rule => None,
        },
    };
    write_report(out, &batch)?;
    fs::write(out.join("graph.json"), graph_json)?;
    print!("{}", metrics_csv(&batch.rows));
    Ok(ExitCode::SUCCESS)
}

fn eval(dir: &Path) -> Result<ExitCode> {
    let episodes = dir.join("episodes");
    let dir = if episodes.is_dir() { episodes } else { dir.to_path_buf() };
    let logs = read_logs(&dir)?;
    if logs.is_empty() {
        bail!("no episode logs in {}", dir.display());
    }
    let mut rows = Vec::new();
    let mut mismatches = 0;
    for (path, log) in &logs {
        let Some((metrics, text)) = log.events.iter().rev().find_map(|e| match e {
            LogEvent::Final { metrics, graph } => Some((metrics, graph)),
            _ => None,
        }) else {
            eprintln!("{}: no final event", path.display());
            mismatches += 1;
            continue;
        };
        let replayed = log
            .replay(log_resolution(log))
            .with_context(|| format!("replaying {}", path.display()))?;
        if serialize_graph(&replayed).text() != *text {
            eprintln!("{}: replayed graph differs from final graph", path.display());
            mismatches += 1;
        }
        rows.push(BatchRow {
            metrics: metrics.clone(),
            error: None,
        });
    }
    print!("{}", metrics_csv(&rows));
    print!("{}", summary_text(&rows, prompt_examples(&logs)));
    if mismatches > 0 {
        eprintln!("{mismatches} log(s) failed replay");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn log_resolution(log: &EpisodeLog) -> f64 {
    log.events
        .iter()
        .find_map(|e| match e {
            LogEvent::Header { resolution, .. } => Some(*resolution),
            _ => None,
        })
        .unwrap_or(BuilderConfig::default().resolution)
}

fn prompt_examples(logs: &[(PathBuf, EpisodeLog)]) -> Option<usize> {
    logs.iter().find_map(|(_, log)| {
        log.events.iter().find_map(|e| match e {
            LogEvent::Header {
                prompt_examples, ..
            } => *prompt_examples,
            _ => None,
        })
    })
}

enum GraphFile {
    Object(ObjectGraph),
    Forest(LabeledForest),
}

fn read_graph(path: &Path) -> Result<GraphFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(g) = serde_json::from_str::<ObjectGraph>(&text) {
        return Ok(GraphFile::Object(g));
    }
    let f = serde_json::from_str::<LabeledForest>(&text)
        .with_context(|| format!("{} is neither an object graph nor a forest", path.display()))?;
    Ok(GraphFile::Forest(f))
}

fn ged(a: &Path, b: &Path) -> Result<GedResult> {
    Ok(match (read_graph(a)?, read_graph(b)?) {
        (GraphFile::Object(a), GraphFile::Object(b)) => graph_edit_distance(&a, &b),
        (a, b) => {
            let forest = |g: GraphFile| match g {
                GraphFile::Object(g) => LabeledForest::from(&g),
                GraphFile::Forest(f) => f,
            };
            forest_edit_distance(&forest(a), &forest(b), &[])
        }
    })
}
