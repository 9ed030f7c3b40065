use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rpt_core::RankProjectionTree;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn rpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rpt"))
        .args(args)
        .env_remove("RPT_LEAF_CAP")
        .output()
        .expect("run rpt")
}

fn ok(args: &[&str]) -> String {
    let out = rpt(args);
    assert!(
        out.status.success(),
        "rpt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// CSV body without `#` provenance lines.
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn build_toy_tree(dir: &Path) -> PathBuf {
    let tree = dir.join("tree.json");
    ok(&[
        "tree",
        "--model",
        p(&fixture("toy.json")),
        "-b",
        "1",
        "-o",
        p(&tree),
    ]);
    tree
}

#[test]
fn validate_reports_sizes_branching_and_digest() {
    let out: Value = serde_json::from_str(&ok(&["validate", p(&fixture("toy.json"))])).unwrap();
    assert_eq!(out["layer_sizes"], serde_json::json!([1, 4, 5]));
    assert_eq!(out["max_half_branch"], 1);
    assert_eq!(out["layers"][2]["max_half_branch"], 2);
    let again: Value = serde_json::from_str(&ok(&["validate", p(&fixture("toy.json"))])).unwrap();
    assert_eq!(out["digest"], again["digest"]);
}

#[test]
fn corrupt_model_exits_with_code_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("toy.json")).unwrap();
    let mut doc: Value = serde_json::from_str(&text).unwrap();
    doc["layers"][1]["bias"] = serde_json::json!([0.0, 1.0]);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, doc.to_string()).unwrap();
    let out = rpt(&["validate", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("layers[1].bias"), "{err}");

    let garbage = dir.path().join("garbage.json");
    fs::write(&garbage, "{\"format_version\": 1, \"layers\": [").unwrap();
    assert_eq!(rpt(&["validate", p(&garbage)]).status.code(), Some(2));
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // B too large for a 4-node layer.
    let out = rpt(&["tree", "--model", p(&fixture("toy.json")), "-b", "2"]);
    assert_eq!(out.status.code(), Some(3));
    // Gradient ranking without reference inputs.
    let out = rpt(&[
        "tree",
        "--model",
        p(&fixture("toy.json")),
        "-b",
        "1",
        "--rank",
        "gradient",
    ]);
    assert_eq!(out.status.code(), Some(3));
    // Top-k out of range.
    let tree = build_toy_tree(dir.path());
    let out = rpt(&["salience", "--tree", p(&tree), "--top", "9"]);
    assert_eq!(out.status.code(), Some(4));
    // k larger than the item count.
    let sal = dir.path().join("s.csv");
    ok(&["salience", "--tree", p(&tree), "-o", p(&sal)]);
    let out = rpt(&[
        "compare-rank",
        "--pred",
        p(&sal),
        "--truth",
        p(&fixture("toy_truth.csv")),
        "-k",
        "6",
    ]);
    assert_eq!(out.status.code(), Some(5));
    // Missing file and bad flags.
    assert_eq!(
        rpt(&["ecdf", "--input", "/nonexistent.csv"]).status.code(),
        Some(1)
    );
    assert_eq!(rpt(&["tree", "--bogus"]).status.code(), Some(64));
}

#[test]
fn leaf_cap_comes_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_rpt"))
        .args(["tree", "--model", p(&fixture("toy.json")), "-b", "1"])
        .env("RPT_LEAF_CAP", "3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("= 4 leaves"));
}

#[test]
fn tree_file_round_trips_through_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let tree = build_toy_tree(dir.path());
    let text = fs::read_to_string(&tree).unwrap();
    let doc: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["half_branch"], 1);
    assert_eq!(doc["nodes"].as_array().unwrap().len(), 7);
    assert_eq!(doc["nodes"][1]["path"], serde_json::json!([1]));
    assert_eq!(doc["nodes"][1]["node_index"], 3);
    assert_eq!(doc["provenance"]["params"]["rank"], "weights");

    // The provenance block is extra; the rest is the library's tree file.
    let mut bare = doc.clone();
    bare.as_object_mut().unwrap().remove("provenance");
    let parsed = RankProjectionTree::from_json(&bare.to_string()).unwrap();
    let mut reserialized: Value = serde_json::from_str(&parsed.to_json()).unwrap();
    reserialized["provenance"] = doc["provenance"].clone();
    assert_eq!(reserialized, doc);
}

#[test]
fn toy_salience_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let tree = build_toy_tree(dir.path());
    let rows = csv_rows(&ok(&[
        "salience",
        "--tree",
        p(&tree),
        "--aggregator",
        "signed-sum",
    ]));
    let expected = [
        ["1", "0", "false"],
        ["2", "-2", "true"],
        ["3", "4", "true"],
        ["4", "0", "false"],
        ["5", "-2", "true"],
    ];
    assert_eq!(rows.len(), 5);
    for (row, want) in rows.iter().zip(expected) {
        assert_eq!(&row[..3], &want[..]);
        assert_eq!(row[3], "signed-sum");
    }

    let count = csv_rows(&ok(&[
        "salience",
        "--tree",
        p(&tree),
        "--aggregator",
        "count",
    ]));
    let mass: f64 = count.iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert_eq!(mass, 4.0);

    let top = csv_rows(&ok(&[
        "salience",
        "--tree",
        p(&tree),
        "--aggregator",
        "signed-sum",
        "--top",
        "2",
    ]));
    assert_eq!(top[0][..3], ["1", "3", "4"]);
    assert_eq!(top[1][..3], ["2", "2", "-2"]);
}

#[test]
fn gradient_baseline_salience() {
    let rows = csv_rows(&ok(&[
        "salience",
        "--model",
        p(&fixture("planted.json")),
        "--ref-inputs",
        p(&fixture("planted_ref_inputs.csv")),
        "--top",
        "1",
    ]));
    assert_eq!(rows[0][1], "4");
    assert_eq!(rows[0][4], "gradient-magnitude");
}

#[test]
fn groups_with_and_without_modules() {
    let dir = tempfile::tempdir().unwrap();
    let tree = build_toy_tree(dir.path());
    let plain: Value = serde_json::from_str(&ok(&["groups", "--tree", p(&tree)])).unwrap();
    let groups = plain["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 3);
    assert_eq!(groups[0]["s_plus"], serde_json::json!([3]));
    assert_eq!(groups[0]["s_minus"], serde_json::json!([2, 5]));

    let named: Value = serde_json::from_str(&ok(&[
        "groups",
        "--tree",
        p(&tree),
        "--modules",
        p(&fixture("toy_modules.json")),
    ]))
    .unwrap();
    // Module 2 = {gB, gC}, module 5 = {gH, gA}.
    assert_eq!(
        named["groups"][0]["s_minus"],
        serde_json::json!(["gA", "gB", "gC", "gH"])
    );
    assert_eq!(
        named["groups"][0]["s_plus"],
        serde_json::json!(["gD", "gE", "gF"])
    );
}

#[test]
fn enrichment_compare_ks_and_ecdf() {
    let dir = tempfile::tempdir().unwrap();
    let tree = build_toy_tree(dir.path());
    let groups = dir.path().join("groups.json");
    ok(&[
        "groups",
        "--tree",
        p(&tree),
        "--modules",
        p(&fixture("toy_modules.json")),
        "-o",
        p(&groups),
    ]);
    let enrich = dir.path().join("enrich.csv");
    ok(&[
        "enrich",
        "--groups",
        p(&groups),
        "--targets",
        p(&fixture("toy_targets.txt")),
        "--universe-size",
        "8",
        "-o",
        p(&enrich),
    ]);
    let text = fs::read_to_string(&enrich).unwrap();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 6);
    // Root S+ = {gD, gE, gF}: 2 of 4 targets, universe 8, P(X >= 2) = 1/2.
    assert_eq!(&records[0][0], "[]");
    assert_eq!(&records[0][3], "plus");
    assert_eq!(&records[0][6], "3");
    assert_eq!(&records[0][7], "2");
    let p_root: f64 = records[0][8].parse().unwrap();
    assert!((p_root - 0.5).abs() < 1e-12, "{p_root}");

    let json: Value = serde_json::from_str(&ok(&[
        "enrich",
        "--groups",
        p(&groups),
        "--targets",
        p(&fixture("toy_targets.txt")),
        "--universe-size",
        "8",
        "--format",
        "json",
    ]))
    .unwrap();
    assert!((json["results"][0]["p_value"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    let ecdf = csv_rows(&ok(&["ecdf", "--input", p(&enrich)]));
    assert_eq!(ecdf.last().unwrap()[1], "1");

    let ks: Value =
        serde_json::from_str(&ok(&["ks", "--a", p(&enrich), "--b", p(&enrich)])).unwrap();
    assert_eq!(ks["result"]["statistic"], 0.0);
    assert_eq!(ks["result"]["p_value"], 1.0);

    let sal = dir.path().join("sal.csv");
    ok(&[
        "salience",
        "--tree",
        p(&tree),
        "--aggregator",
        "count",
        "-o",
        p(&sal),
    ]);
    let cmp: Value = serde_json::from_str(&ok(&[
        "compare-rank",
        "--pred",
        p(&sal),
        "--truth",
        p(&fixture("toy_truth.csv")),
        "-k",
        "3",
    ]))
    .unwrap();
    // Pred top 3: 3 (2), 2 (1), 5 (1); truth ranks them 2 (40), 5 (30), 3 (25).
    assert_eq!(cmp["comparison"]["raw_l1"], 4);
    assert_eq!(cmp["comparison"]["normalizer"], 4);
    assert_eq!(cmp["comparison"]["normalized"], 1.0);
}

#[test]
fn ks_direction_is_explicit() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "p_value\n1\n2\n3\n").unwrap();
    fs::write(&b, "p_value\n4\n5\n6\n").unwrap();
    let up: Value = serde_json::from_str(&ok(&["ks", "--a", p(&a), "--b", p(&b)])).unwrap();
    assert_eq!(up["result"]["statistic"], 1.0);
    let down: Value = serde_json::from_str(&ok(&[
        "ks",
        "--a",
        p(&a),
        "--b",
        p(&b),
        "--direction",
        "b-above-a",
    ]))
    .unwrap();
    assert_eq!(down["result"]["statistic"], 0.0);
}
