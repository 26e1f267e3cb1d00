use std::path::Path;
use std::process::{Command, Output};

fn tunnelnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tunnelnav"))
        .args(args)
        .env_remove("TUNNELNAV_LOG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn report(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Empty exploration budget: a short hop that keeps the tests fast.
const EMPTY_BUDGET: &str = "t_reference = 0.0\n";

/// Pillar hanging over the start point, hit during the climb.
const CRASH: &str = r#"t_reference = 0.0

[[overrides.extra_obstacles]]
shape = "cylinder"
center = [1.5, 0.0]
radius = 0.4
z0 = 0.8
z1 = 3.0
"#;

#[test]
fn presets_list_names_every_preset() {
    let o = tunnelnav(&["presets", "list"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for name in ["curving", "narrow_inclined", "junction_obstacles", "void", "wide_mine"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
}

#[test]
fn empty_budget_lands_back_at_the_start() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("empty.toml");
    std::fs::write(&cfg, EMPTY_BUDGET).unwrap();
    let out = tmp.path().join("run");
    let o = tunnelnav(&["run", "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let r = report(&out);
    assert_eq!(r["outcome"], "SUCCESS");
    assert_eq!(r["seed"], 4);
    assert_eq!(r["explore_duration"].as_f64().unwrap(), 0.0);
    assert!(r["distance"].as_f64().unwrap() < 1.0);
    assert!(r["return_error"].as_f64().unwrap() < 0.1);
    for f in ["trace.ndjson", "events.ndjson", "objects.ndjson", "velocity.csv", "path.csv", "outline.csv", "artifacts.csv"] {
        assert!(out.join(f).is_file(), "{f} not written");
    }
}

#[test]
fn batch_covers_presets_by_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("empty.toml");
    std::fs::write(&cfg, EMPTY_BUDGET).unwrap();
    let out = tmp.path().join("batch");
    let o = tunnelnav(&[
        "batch",
        "--config",
        cfg.to_str().unwrap(),
        "--presets",
        "curving,void,wide_mine",
        "--seeds",
        "1..3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let csv = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.contains(",SUCCESS,")));
    assert!(out.join("void_seed2").join("report.json").is_file());
    assert!(stdout(&o).contains("9/9 missions succeeded"));
}

#[test]
fn crashed_run_signals_partial_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = tmp.path().join("ok.toml");
    let crash = tmp.path().join("crash.toml");
    std::fs::write(&ok, EMPTY_BUDGET).unwrap();
    std::fs::write(&crash, CRASH).unwrap();
    let out = tmp.path().join("batch");
    let o = tunnelnav(&[
        "batch",
        "--config",
        ok.to_str().unwrap(),
        "--config",
        crash.to_str().unwrap(),
        "--seeds",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    let csv = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let outcomes: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(outcomes, ["SUCCESS", "CRASH"]);
}

#[test]
fn replay_detects_identity_and_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("empty.toml");
    std::fs::write(&cfg, EMPTY_BUDGET).unwrap();
    let out = tmp.path().join("run");
    let o = tunnelnav(&["run", "--config", cfg.to_str().unwrap(), "--preset", "void", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let trace = out.join("trace.ndjson");
    let o = tunnelnav(&["replay", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("identically"));

    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[5] = lines[5].replacen("\"t\":", "\"t\":1e3,\"u\":", 1);
    std::fs::write(&trace, lines.join("\n") + "\n").unwrap();
    let o = tunnelnav(&["replay", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("line 6"), "{}", stdout(&o));
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "preset = \"atlantis\"\n").unwrap();
    assert_eq!(code(&tunnelnav(&["run", "--config", bad.to_str().unwrap()])), 2);
    std::fs::write(&bad, "[apf]\nr_c = -1.0\n").unwrap();
    assert_eq!(code(&tunnelnav(&["run", "--config", bad.to_str().unwrap()])), 2);
    assert_eq!(code(&tunnelnav(&["run", "--config", "/nonexistent/cfg.toml"])), 2);
    assert_eq!(code(&tunnelnav(&["batch", "--seeds", "5..2"])), 2);
    assert_eq!(code(&tunnelnav(&["run", "--frobnicate"])), 2);
}

#[test]
fn verbosity_follows_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("empty.toml");
    std::fs::write(&cfg, EMPTY_BUDGET).unwrap();
    let args = ["batch", "--config", cfg.to_str().unwrap(), "--seeds", "1"];
    let quiet = tunnelnav(&args);
    let loud = Command::new(env!("CARGO_BIN_EXE_tunnelnav")).args(args).env("TUNNELNAV_LOG", "info").output().unwrap();
    assert!(!String::from_utf8_lossy(&quiet.stderr).contains("batch:"));
    assert!(String::from_utf8_lossy(&loud.stderr).contains("batch:"));
}
