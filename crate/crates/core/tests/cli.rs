use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use roicount::raster::read_png;

const BIN: &str = env!("CARGO_BIN_EXE_roicount");
const ECHO: &str = env!("CARGO_BIN_EXE_echo-detector");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("ROICOUNT_CONFIG").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn write_jsonl(path: &Path, rows: &[Value]) {
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

fn car(roi: &str, ts: &str, i: usize, score: f64) -> Value {
    let x = (i % 40) as f64 * 15.0;
    let y = (i / 40) as f64 * 12.0;
    json!({"roi_id": roi, "timestamp": ts, "class": "Small Car", "x1": x, "y1": y, "x2": x + 10.0, "y2": y + 8.0, "score": score})
}

fn counts_to_detections(roi: &str, counts: &[(&str, usize)]) -> Vec<Value> {
    counts
        .iter()
        .flat_map(|(ts, n)| (0..*n).map(move |i| car(roi, ts, i, 0.9)))
        .collect()
}

/// A one-image data set whose config routes every pass to `backend`.
fn external_setup(dir: &Path, backend: Value) -> std::path::PathBuf {
    let synth = dir.join("s");
    let out = run(&["--seed", "3", "synth", "--out-dir", p(&synth), "--rois", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg_path = synth.join("config.json");
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg["backends"] = json!({"vanilla": backend.clone(), "multires": backend});
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    cfg_path
}

#[test]
fn missing_osm_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sample", "--osm", p(&dir.path().join("absent.osm")), "--out", p(&dir.path().join("r.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.osm"));
}

#[test]
fn sample_writes_rois() {
    let dir = tempfile::tempdir().unwrap();
    let osm = dir.path().join("area.osm");
    std::fs::write(
        &osm,
        r#"<osm><node id="1" lat="0" lon="0"/><node id="2" lat="0" lon="0.001"/><node id="3" lat="0.001" lon="0.001"/>
        <way id="7"><nd ref="1"/><nd ref="2"/><nd ref="3"/><tag k="shop" v="supermarket"/></way></osm>"#,
    )
    .unwrap();
    let rois = dir.path().join("rois.jsonl");
    let out = run(&["sample", "--osm", p(&osm), "--out", p(&rois)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = jsonl(&rois);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["roi_id"], "shop=supermarket/7");
    assert_eq!(rows[0]["feature"], 7);
}

#[test]
fn synth_detect_evaluate_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let out = run(&["--seed", "11", "synth", "--out-dir", p(&root), "--rois", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = root.join("config.json");
    assert_eq!(jsonl(&root.join("images.jsonl")).len(), 6);

    let out = run(&["--config", p(&cfg), "detect", "--record", p(&root.join("tiles.jsonl"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dets = jsonl(&root.join("detections.jsonl"));
    assert!(dets.len() > 600);

    let out = run(&["--config", p(&cfg), "evaluate"]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["groups"]["Score"], 1.0);
    assert_eq!(report["mape"], 0.0);
    assert_eq!(report["mape_images"], 6);

    let out = run(&["--config", p(&cfg), "report"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report_dir = root.join("report");
    let changes = jsonl(&report_dir.join("changes.jsonl"));
    assert_eq!(changes.len(), 2);
    assert!(changes.iter().all(|c| c["class"] == "Small Car" && c["samples"] == 3));
    assert_eq!(jsonl(&report_dir.join("indicators.jsonl")).len(), 2);
    let csv = std::fs::read_to_string(report_dir.join("counts.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("roi_id,timestamp,class,count"));
    assert_eq!(csv.lines().count(), 7);
    let png = read_png(&report_dir.join("heatmap.png")).unwrap();
    assert_eq!((png.width(), png.height()), (64, 64));

    // replaying the recorded tiles reproduces the fused output
    let mut c: Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    let replay = json!({"kind": "replay", "path": "tiles.jsonl"});
    c["backends"] = json!({"vanilla": replay.clone(), "multires": replay});
    let replay_cfg = root.join("replay.json");
    std::fs::write(&replay_cfg, c.to_string()).unwrap();
    let again = root.join("again.jsonl");
    let out = run(&["--config", p(&replay_cfg), "detect", "--out", p(&again)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(root.join("detections.jsonl")).unwrap());
}

#[test]
fn report_reproduces_figure_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("d.jsonl");
    let mut rows = counts_to_detections("shop=supermarket/1", &[("2019-01", 410), ("2019-02", 418), ("2019-03", 435)]);
    rows.extend(counts_to_detections("amenity=school/2", &[("2019-01", 150), ("2019-02", 194), ("2019-03", 253)]));
    write_jsonl(&det, &rows);
    let out_dir = dir.path().join("out");
    let out = run(&["report", "--detections", p(&det), "--out-dir", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let changes = jsonl(&out_dir.join("changes.jsonl"));
    let delta = |roi: &str| changes.iter().find(|c| c["roi_id"] == roi).unwrap()["delta"].as_u64().unwrap();
    assert_eq!(delta("shop=supermarket/1"), 25);
    assert_eq!(delta("amenity=school/2"), 103);
    let class = |roi: &str| changes.iter().find(|c| c["roi_id"] == roi).unwrap()["variation_class"].clone();
    assert_eq!(class("shop=supermarket/1"), "small");
    assert_eq!(class("amenity=school/2"), "medium");
}

#[test]
fn single_timestamp_has_no_history() {
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("d.jsonl");
    write_jsonl(&det, &counts_to_detections("shop=supermarket/1", &[("2019-01", 5)]));
    let out = run(&["report", "--detections", p(&det), "--out-dir", p(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn empty_manifest_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("images.jsonl"), "").unwrap();
    std::fs::write(dir.path().join("ann.jsonl"), "").unwrap();
    let mock = json!({"kind": "mock", "annotations": "ann.jsonl"});
    let cfg = json!({"backends": {"vanilla": mock.clone(), "multires": mock}});
    let cfg_path = dir.path().join("c.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let det = dir.path().join("d.jsonl");
    let out = run(&["--config", p(&cfg_path), "detect", "--images", p(&dir.path().join("images.jsonl")), "--out", p(&det)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&det).unwrap(), "");
}

#[test]
fn backend_failure_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = external_setup(dir.path(), json!({"kind": "external", "program": ECHO, "args": ["--fail-after", "0"]}));
    let out = run(&["--config", p(&cfg), "--workers", "1", "detect"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn threshold_override_drops_weak_regions() {
    let dir = tempfile::tempdir().unwrap();
    let backend = json!({"kind": "external", "program": ECHO, "args": ["Small Car", "10", "10", "22", "18", "0.5"]});
    let cfg = external_setup(dir.path(), backend);
    let det = dir.path().join("d.jsonl");
    let out = run(&["--config", p(&cfg), "detect", "--out", p(&det)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!jsonl(&det).is_empty());
    let out = run(&["--config", p(&cfg), "--threshold-override", "0.6", "detect", "--out", p(&det)]);
    assert!(out.status.success());
    assert!(jsonl(&det).is_empty());
}

#[test]
fn invalid_sigma_is_a_config_error() {
    let out = run(&["--sigma", "1.5", "evaluate", "--detections", "x", "--annotations", "y"]);
    assert_eq!(out.status.code(), Some(2));
}
