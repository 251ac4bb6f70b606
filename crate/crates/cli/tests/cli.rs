use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ccrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccrec"))
        .args(args)
        .env("CCREC_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = ccrec(args);
    assert!(
        out.status.success(),
        "ccrec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// generate -> split at a size that trains in well under a second.
fn small_split(root: &Path, gamma: &str) {
    ok(&[
        "generate",
        "--out",
        p(&root.join("gen")),
        "--seed",
        "3",
        "--n-users",
        "80",
        "--n-items",
        "60",
        "--min-interactions",
        "4",
        "--max-interactions",
        "8",
        "--gamma",
        gamma,
    ]);
    ok(&[
        "split",
        "--data",
        p(&root.join("gen/interactions.csv")),
        "--out",
        p(&root.join("split")),
        "--seed",
        "3",
        "--negatives",
        "3",
    ]);
}

const TINY_MODEL: [&str; 12] = [
    "--d",
    "8",
    "--d-prime",
    "4",
    "--clf-hidden",
    "8",
    "--epochs",
    "3",
    "--batch-size",
    "256",
    "--lr",
    "3e-3",
];

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(ccrec(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(ccrec(&["split", "--data", "x.csv"]).status.code(), Some(2));
    assert_eq!(
        ccrec(&["train", "--data", "d", "--out", "o", "--variant", "nope"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(ccrec(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccrec(&[
        "split",
        "--data",
        p(&dir.path().join("missing.csv")),
        "--out",
        p(&dir.path().join("s")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "user_id,item_id,channel\na,b,store\n").unwrap();
    let out = ccrec(&[
        "split",
        "--data",
        p(&bad),
        "--out",
        p(&dir.path().join("s2")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let mut reports = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        small_split(root, "2");
        let (split, out) = (root.join("split"), root.join("train"));
        let mut train = vec!["train", "--data", p(&split), "--out", p(&out)];
        train.extend(TINY_MODEL);
        ok(&train);
        ok(&[
            "evaluate",
            "--data",
            p(&root.join("split")),
            "--model",
            p(&root.join("train/model.ckpt")),
            "--out",
            p(&root.join("eval")),
        ]);
        let log = fs::read_to_string(root.join("train/train_log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 3);
        reports.push(fs::read(root.join("eval/report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let report: Value = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn commands_do_not_touch_inputs_and_replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_split(root, "1");
    let csv = root.join("gen/interactions.csv");
    let before = fs::read(&csv).unwrap();
    ok(&[
        "split",
        "--data",
        p(&csv),
        "--out",
        p(&root.join("split2")),
        "--seed",
        "3",
        "--negatives",
        "3",
    ]);
    assert_eq!(fs::read(&csv).unwrap(), before);
    assert_eq!(
        fs::read(root.join("split/train.csv")).unwrap(),
        fs::read(root.join("split2/train.csv")).unwrap()
    );

    let manifest = read_json(&root.join("gen/manifest.json"));
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seeds"], serde_json::json!([3]));
    fs::remove_file(&csv).unwrap();
    ok(&["replay", p(&root.join("gen/manifest.json"))]);
    assert_eq!(fs::read(&csv).unwrap(), before);
}

#[test]
fn ablate_reports_five_variants_by_two_channels() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_split(root, "2");
    let (split, out) = (root.join("split"), root.join("ablate"));
    let mut args = vec![
        "ablate",
        "--data",
        p(&split),
        "--out",
        p(&out),
        "--seeds",
        "0,1",
    ];
    args.extend(TINY_MODEL);
    ok(&args);
    let report = read_json(&root.join("ablate/report.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 10);
    let variants: std::collections::BTreeSet<&str> = rows
        .iter()
        .map(|r| r["variant"].as_str().unwrap())
        .collect();
    assert_eq!(variants.len(), 5);
    for r in rows {
        assert_eq!(r["seeds"], serde_json::json!([0, 1]));
        assert!(r["ndcg"]["10"]["mean"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn gridsearch_reads_a_custom_grid() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_split(root, "2");
    let grid = root.join("grid.json");
    fs::write(
        &grid,
        r#"{"d_prime":[2,4],"clf_hidden":[4],"learning_rate":[3e-3],"lambda_cls":[0.1],"lambda_attn":[0.1]}"#,
    )
    .unwrap();
    ok(&[
        "gridsearch",
        "--data",
        p(&root.join("split")),
        "--out",
        p(&root.join("grid")),
        "--seeds",
        "0",
        "--grid",
        p(&grid),
        "--d",
        "8",
        "--epochs",
        "2",
        "--batch-size",
        "256",
    ]);
    let points = fs::read_to_string(root.join("grid/grid_points.jsonl")).unwrap();
    assert_eq!(points.lines().count(), 2);
    let report = read_json(&root.join("grid/report.json"));
    assert_eq!(report["seed_runs"].as_array().unwrap().len(), 1);
}

#[test]
fn probe_self_match_dominates_cross_match_on_divergent_data() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&[
        "generate",
        "--out",
        p(&root.join("gen")),
        "--seed",
        "1",
        "--gamma",
        "3",
        "--dup-prob",
        "0.2",
    ]);
    ok(&[
        "split",
        "--data",
        p(&root.join("gen/interactions.csv")),
        "--out",
        p(&root.join("split")),
        "--seed",
        "1",
        "--negatives",
        "1",
    ]);
    ok(&[
        "probe",
        "--data",
        p(&root.join("split")),
        "--out",
        p(&root.join("probe")),
        "--seed",
        "1",
    ]);
    let report = read_json(&root.join("probe/report.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    for channel in ["off", "on"] {
        let ndcg5 = |regime: &str, mode: &str| {
            rows.iter()
                .find(|r| {
                    r["channel"] == channel && r["regime"] == regime && r["candidate_mode"] == mode
                })
                .unwrap()["ndcg"]["5"]
                .as_f64()
                .unwrap()
        };
        let own = ndcg5("self_match", "without_purchased");
        assert!(own > ndcg5("cross_match", "without_purchased"), "{channel}");
        assert!(own > ndcg5("cross_match", "with_purchased"), "{channel}");
    }
}
