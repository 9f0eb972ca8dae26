use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn curiosim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curiosim"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CURIOUS_LLM_URL")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_report_and_eval_replays_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = curiosim(
        &["run", "--scene", "flip_box", "--seed", "3", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("scene,seed,planner,success"));
    assert!(out.join("metrics.csv").is_file());
    assert!(out.join("summary.txt").is_file());
    assert!(out.join("graph.json").is_file());
    assert!(out.join("episodes/flip_box_rule_3.jsonl").is_file());

    let o = curiosim(&["eval", "--logs", out.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("flip_box,3,rule,true,1.0"));
}

#[test]
fn eval_fails_on_tampered_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = curiosim(
        &["run", "--scene", "lift_cloth", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success());
    let log = out.join("episodes/lift_cloth_rule_0.jsonl");
    let text = fs::read_to_string(&log).unwrap();
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| !l.contains("\"event\":\"edge_added\""))
        .collect();
    assert!(kept.len() < text.lines().count());
    fs::write(&log, kept.join("\n") + "\n").unwrap();
    let o = curiosim(&["eval", "--logs", out.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
}

#[test]
fn batch_reads_suite_with_scene_files() {
    let dir = tempfile::tempdir().unwrap();
    let scene = curiosim::scene::bundled_scene_text("check_under").unwrap();
    fs::write(dir.path().join("mine.json"), scene).unwrap();
    fs::write(
        dir.path().join("suite.json"),
        r#"{"scenes": ["mine.json", "push_box"], "base_seed": 7}"#,
    )
    .unwrap();
    let out = dir.path().join("batch");
    let o = curiosim(
        &[
            "batch",
            "--suite",
            dir.path().join("suite.json").to_str().unwrap(),
            "--repeats",
            "2",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    for prefix in ["mine,7,rule", "mine,8,rule", "push_box,7,rule", "push_box,8,rule"] {
        assert!(csv.contains(prefix), "missing {prefix} in\n{csv}");
    }
    assert_eq!(fs::read_dir(out.join("episodes")).unwrap().count(), 4);
}

#[test]
fn llm_run_without_endpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = curiosim(
        &["run", "--scene", "flip_box", "--planner", "llm-3ex", "--out", "x"],
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("CURIOUS_LLM_URL"));
}

#[test]
fn ged_accepts_graphs_and_forests() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    fs::write(
        &a,
        r#"{"labels": {"1": "box", "2": "toy"}, "edges": [[1, 2, "inside"]]}"#,
    )
    .unwrap();
    fs::write(
        &b,
        r#"{"labels": {"1": "box", "2": "ball"}, "edges": []}"#,
    )
    .unwrap();
    let o = curiosim(
        &["ged", "--graph", a.to_str().unwrap(), "--graph", b.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["cost"], 2);
    assert_eq!(v["mode"], "exact");

    let out = dir.path().join("run");
    assert!(curiosim(&["run", "--scene", "open_drawer", "--out", out.to_str().unwrap()], dir.path())
        .status
        .success());
    let g = out.join("graph.json");
    let o = curiosim(
        &["ged", "--graph", g.to_str().unwrap(), "--graph", g.to_str().unwrap()],
        dir.path(),
    );
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["cost"], 0);
}

#[test]
fn ged_requires_two_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let o = curiosim(&["ged", "--graph", "a.json"], dir.path());
    assert!(!o.status.success());
}
