use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use speaq_core::io::read_scenes;
use speaq_core::speaq::{adaptive_d, augment_gt_set};
use speaq_core::{brute_force_assignment, build_cost_matrix, CostWeights, QualityConfig};

fn speaq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speaq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const TABLE_COUNTS: &str = "predicate_id,count\n0,990\n1,398\n2,299\n3,173\n4,186\n";

#[test]
fn group_single_group_takes_all_queries() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("freq.csv");
    std::fs::write(&csv, TABLE_COUNTS).unwrap();
    let out = dir.path().join("g");
    let o = speaq(&[
        "group",
        "--freq",
        s(&csv),
        "--n-g",
        "1",
        "--n-q",
        "300",
        "--out-dir",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let q = read_json(&out.join("query_groups.json"));
    assert_eq!(q["counts"], serde_json::json!([300]));
    let p = read_json(&out.join("predicate_groups.json"));
    assert_eq!(p["groups"], serde_json::json!([[0, 1, 2, 4, 3]]));
    assert!(String::from_utf8_lossy(&o.stdout).contains("300"));
}

#[test]
fn group_malformed_row_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("freq.csv");
    std::fs::write(&csv, "predicate_id,count\n0,10\n1,ten\n").unwrap();
    let o = speaq(&[
        "group",
        "--freq",
        s(&csv),
        "--n-g",
        "1",
        "--n-q",
        "10",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn group_too_many_groups_is_a_config_failure() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("freq.csv");
    std::fs::write(&csv, "predicate_id,count\n0,10\n").unwrap();
    let o = speaq(&[
        "group",
        "--freq",
        s(&csv),
        "--n-g",
        "3",
        "--n-q",
        "10",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

/// Two GTs with disjoint boxes. Predictions 0-2 copy GT 0 and prediction 3
/// copies GT 1; prediction 4 matches GT 0's object but not its subject.
/// Under the default quality settings GT 0 has four entries of quality 0.9,
/// so its duplication count is floor(3.6 - 0.05) = 3.
const WORKED_SCENE: &str = concat!(
    r#"{"gts":["#,
    r#"{"s_box":[0.1,0.1,0.3,0.3],"o_box":[0.1,0.4,0.3,0.6],"s_cls":0,"o_cls":1,"p_cls":0},"#,
    r#"{"s_box":[0.6,0.1,0.8,0.3],"o_box":[0.6,0.4,0.8,0.6],"s_cls":2,"o_cls":0,"p_cls":1}],"#,
    r#""preds":["#,
    r#"{"s_box":[0.1,0.1,0.3,0.3],"o_box":[0.1,0.4,0.3,0.6],"s_probs":[0.7,0.1,0.1,0.1],"o_probs":[0.1,0.7,0.1,0.1],"p_probs":[0.2,0.6,0.2]},"#,
    r#"{"s_box":[0.1,0.1,0.3,0.3],"o_box":[0.1,0.4,0.3,0.6],"s_probs":[0.7,0.1,0.1,0.1],"o_probs":[0.1,0.7,0.1,0.1],"p_probs":[0.2,0.6,0.2]},"#,
    r#"{"s_box":[0.1,0.1,0.3,0.3],"o_box":[0.1,0.4,0.3,0.6],"s_probs":[0.7,0.1,0.1,0.1],"o_probs":[0.1,0.7,0.1,0.1],"p_probs":[0.2,0.6,0.2]},"#,
    r#"{"s_box":[0.6,0.1,0.8,0.3],"o_box":[0.6,0.4,0.8,0.6],"s_probs":[0.1,0.1,0.7,0.1],"o_probs":[0.7,0.1,0.1,0.1],"p_probs":[0.1,0.7,0.2]},"#,
    r#"{"s_box":[0.4,0.7,0.5,0.9],"o_box":[0.1,0.4,0.3,0.6],"s_probs":[0.1,0.1,0.7,0.1],"o_probs":[0.1,0.7,0.1,0.1],"p_probs":[0.2,0.6,0.2]}"#,
    "]}\n"
);

fn pairs_of(report: &Value) -> Vec<(u64, u64)> {
    report["scenes"][0]["pairs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (p["gt"].as_u64().unwrap(), p["prediction"].as_u64().unwrap()))
        .collect()
}

fn worked_setup(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let scenes = dir.join("scenes.jsonl");
    std::fs::write(&scenes, WORKED_SCENE).unwrap();
    let csv = dir.join("freq.csv");
    std::fs::write(&csv, "predicate_id,count\n0,10\n1,5\n").unwrap();
    let groups = dir.join("groups");
    let o = speaq(&[
        "group",
        "--freq",
        s(&csv),
        "--n-g",
        "1",
        "--n-q",
        "5",
        "--out-dir",
        s(&groups),
    ]);
    assert!(o.status.success());
    (scenes, groups)
}

#[test]
fn assign_worked_example_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let (scenes, groups) = worked_setup(dir.path());
    let out = dir.path().join("out");
    let o = speaq(&[
        "assign",
        "--scenes",
        s(&scenes),
        "--groups-dir",
        s(&groups),
        "--out-dir",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("assignments.json"));
    assert_eq!(report["strategy"], "speaq");
    assert_eq!(report["scenes"][0]["d"], serde_json::json!([3, 1]));
    assert_eq!(pairs_of(&report), vec![(0, 0), (0, 1), (0, 2), (1, 3)]);

    // Exhaustive search over the augmented matrix agrees.
    let scene = &read_scenes(&scenes).unwrap()[0];
    let d = adaptive_d(&scene.gts, &scene.preds, &QualityConfig::default()).unwrap();
    assert_eq!(d, vec![3, 1]);
    let aug = augment_gt_set(&d, None, 5).unwrap();
    let m = build_cost_matrix(
        &scene.gts,
        &aug.slots,
        &scene.preds,
        &CostWeights::default(),
        None,
    )
    .unwrap();
    let best = brute_force_assignment(&m).unwrap();
    let mut oracle: Vec<(u64, u64)> = best
        .perm
        .iter()
        .enumerate()
        .filter_map(|(row, &col)| aug.slots[row].map(|g| (g as u64, col as u64)))
        .collect();
    oracle.sort();
    assert_eq!(pairs_of(&report), oracle);
    let total = report["scenes"][0]["total_cost"].as_f64().unwrap();
    assert!((total - best.total_cost).abs() <= 1e-5 * best.total_cost.abs().max(1.0));
    for p in report["scenes"][0]["pairs"].as_array().unwrap() {
        let l = &p["loss"];
        let sum = l["subject"].as_f64().unwrap()
            + l["predicate"].as_f64().unwrap()
            + l["object"].as_f64().unwrap();
        assert!((sum - p["loss_total"].as_f64().unwrap()).abs() < 1e-4);
    }
}

#[test]
fn assign_single_pairs_each_gt_once() {
    let dir = tempfile::tempdir().unwrap();
    let (scenes, _) = worked_setup(dir.path());
    let out = dir.path().join("out");
    let o = speaq(&[
        "assign",
        "--scenes",
        s(&scenes),
        "--strategy",
        "single",
        "--out-dir",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pairs = pairs_of(&read_json(&out.join("assignments.json")));
    assert_eq!(pairs.iter().filter(|(g, _)| *g == 0).count(), 1);
    assert_eq!(pairs.iter().filter(|(g, _)| *g == 1).count(), 1);
}

#[test]
fn assign_speaq_without_groups_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (scenes, _) = worked_setup(dir.path());
    let o = speaq(&["assign", "--scenes", s(&scenes), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn assign_empty_scene_has_no_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes.jsonl");
    std::fs::write(&scenes, "{\"gts\":[],\"preds\":[]}\n").unwrap();
    let out = dir.path().join("out");
    let o = speaq(&[
        "assign",
        "--scenes",
        s(&scenes),
        "--strategy",
        "single",
        "--out-dir",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("assignments.json"));
    assert_eq!(report["scenes"][0]["pairs"], serde_json::json!([]));
}

#[test]
fn assign_schema_violation_names_record() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes.jsonl");
    std::fs::write(
        &scenes,
        "{\"gts\":[],\"preds\":[]}\n{\"gts\":[{}],\"preds\":[]}\n",
    )
    .unwrap();
    let o = speaq(&[
        "assign",
        "--scenes",
        s(&scenes),
        "--strategy",
        "single",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

fn small_config(dir: &Path, strategies: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(
        &p,
        format!("strategies = {strategies}\n\n[scenario]\nscenes = 15\nseed = 11\n"),
    )
    .unwrap();
    p
}

#[test]
fn simulate_is_reproducible_and_reports_each_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"["single", "speaq"]"#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = speaq(&[
            "simulate",
            "--config",
            s(&cfg),
            "--out-dir",
            s(out),
            "--svg",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ra = std::fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("report.json")).unwrap());
    let v: Value = serde_json::from_slice(&ra).unwrap();
    let names: Vec<&String> = v["strategies"].as_object().unwrap().keys().collect();
    assert_eq!(names, ["single", "speaq"]);
    assert_eq!(v["seed"], 11);
    assert!(a.join("summary.csv").exists());
    assert!(a.join("frequency_per_group.svg").exists());
}

#[test]
fn simulate_seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"["single"]"#);
    let out = dir.path().join("o");
    let o = speaq(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&out),
        "--seed",
        "99",
    ]);
    assert!(o.status.success());
    assert_eq!(read_json(&out.join("report.json"))["seed"], 99);
}

#[test]
fn simulate_missing_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = speaq(&[
        "simulate",
        "--config",
        s(&dir.path().join("nope.toml")),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_unknown_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[scenario]\nscenez = 3\n").unwrap();
    let o = speaq(&["simulate", "--config", s(&p), "--out-dir", s(dir.path())]);
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("scenez"));
}

#[test]
fn simulate_needs_an_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"["single"]"#);
    let o = speaq(&["simulate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_defaults_pass() {
    let o = speaq(&["verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(
        String::from_utf8_lossy(&o.stdout).contains("PASS hungarian_vs_brute_force (1000 trials")
    );
}

#[test]
fn verify_injected_fault_fails() {
    let o = speaq(&["verify", "--trials", "50", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn verify_max_n_one_passes() {
    let o = speaq(&["verify", "--trials", "50", "--max-n", "1"]);
    assert!(o.status.success());
}

#[test]
fn unknown_flag_is_a_usage_failure() {
    assert_eq!(speaq(&["verify", "--bogus"]).status.code(), Some(1));
}
