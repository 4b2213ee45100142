use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn apvlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apvlm")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn init(dir: &Path) {
    let out = apvlm(&["init", "--out", path(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn init_then_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    init(dir.path());
    let out_dir = dir.path().join("out");
    let out = apvlm(&["run", "--config", path(&dir.path().join("experiment.json")), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let logs = fs::read_dir(out_dir.join("episodes")).unwrap().count();
    assert_eq!(logs, 160);
    assert!(out_dir.join("episodes/scene1_3Dx_000.jsonl").exists());
    assert!(!out_dir.join("transcripts").exists());
    let md = fs::read_to_string(out_dir.join("report.md")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), md);
    assert_eq!(fs::read_to_string(out_dir.join("report.csv")).unwrap().lines().count(), 17);

    let results = out_dir.join("metrics.json");
    let csv = apvlm(&["report", "--results", path(&results), "--format", "csv"]);
    assert!(csv.status.success());
    assert_eq!(String::from_utf8_lossy(&csv.stdout), fs::read_to_string(out_dir.join("report.csv")).unwrap());
    let again = apvlm(&["report", "--results", path(&results)]);
    assert_eq!(String::from_utf8_lossy(&again.stdout), md);
    let bad = apvlm(&["report", "--results", path(&results), "--format", "html"]);
    assert!(!bad.status.success());

    let log = out_dir.join("episodes/scene2_3Dx_004.jsonl");
    let replay = apvlm(&["replay", path(&log)]);
    assert_eq!(replay.status.code(), Some(0));
    assert!(!String::from_utf8_lossy(&replay.stdout).is_empty());
}

#[test]
fn missing_scene_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    init(dir.path());
    fs::remove_file(dir.path().join("scenes/scene2.json")).unwrap();
    let out_dir = dir.path().join("out");
    let out = apvlm(&["run", "--config", path(&dir.path().join("experiment.json")), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out_dir.exists());
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("experiment.json");
    fs::write(&cfg, r#"{"scenes": [], "trials_per_cell": 0}"#).unwrap();
    let out = apvlm(&["run", "--config", path(&cfg), "--out", path(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_endpoint_exits_with_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    init(dir.path());
    let cfg_path = dir.path().join("experiment.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg["analyzer"] = "vlm".into();
    cfg["policy"] = "vlm".into();
    cfg["trials_per_cell"] = 1.into();
    cfg["endpoint"] = serde_json::json!({
        "base_url": "http://127.0.0.1:9",
        "model_name": "mock",
        "timeout_secs": 2,
        "max_retries": 0
    });
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = apvlm(&["run", "--config", path(&cfg_path), "--out", path(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn render_is_deterministic_and_validates_pose() {
    let dir = tempfile::tempdir().unwrap();
    init(dir.path());
    let scene = dir.path().join("scenes/scene1.json");
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    for p in [&a, &b] {
        let out = apvlm(&["render", "--scene", path(&scene), "--pose", "-0.1,0.3,0.8,0,0", "--out", path(p)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let png = fs::read(&a).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    assert_eq!(png, fs::read(&b).unwrap());
    let svg = fs::read_to_string(dir.path().join("a.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    let tilted = apvlm(&["render", "--scene", path(&scene), "--pose", "0.1,0.5,0.2,35,0", "--out", path(&a)]);
    assert!(tilted.status.success());
    for bad in ["1,2,3", "a,b,c,d,e", "0,0,0,0,0,0", "0,0,nan,0,0"] {
        let out = apvlm(&["render", "--scene", path(&scene), "--pose", bad, "--out", path(&a)]);
        assert_eq!(out.status.code(), Some(2), "pose {bad:?}");
    }
    let missing = apvlm(&["render", "--scene", "/nonexistent.json", "--pose", "0,0,0.5,0,0", "--out", path(&a)]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn replay_flags_corruption_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    init(dir.path());
    let cfg_path = dir.path().join("experiment.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg["trials_per_cell"] = 1.into();
    cfg["action_spaces"] = serde_json::json!(["3Dx"]);
    cfg["policy"] = "random".into();
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out_dir = dir.path().join("out");
    assert!(apvlm(&["run", "--config", path(&cfg_path), "--out", path(&out_dir)]).status.success());
    let log = out_dir.join("episodes/scene2_3Dx_000.jsonl");
    let text = fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() >= 3, "{text}");

    // Drop a step record: indices stop being sequential.
    let mut corrupt = lines.clone();
    corrupt.remove(1);
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, corrupt.join("\n") + "\n").unwrap();
    let out = apvlm(&["replay", path(&bad)]);
    assert_eq!(out.status.code(), Some(5));

    // An interrupted run: the result record is missing.
    let cut = dir.path().join("cut.jsonl");
    fs::write(&cut, lines[..lines.len() - 1].join("\n") + "\n").unwrap();
    let out = apvlm(&["replay", path(&cut)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}
