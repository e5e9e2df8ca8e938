//! End-to-end tests of the command-line surface: exit codes, the full
//! sim-backed workflow, and report schema validity.

use std::path::Path;
use std::process::{Command, Output};

use flipbench_core::report::MetricReport;

fn flipbench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flipbench"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_items(dir: &Path) {
    let mut lines = String::new();
    for i in 0..24 {
        let line = if i % 3 == 2 {
            format!(
                r#"{{"id":"q{i}","question":"Is sample {i} blue?","options":[{{"letter":"Yes","text":"Yes"}},{{"letter":"No","text":"No"}}],"answer":"{}","task_type":"yes_no","source":"demo","category":{{"task":"perception","sub":"VI"}}}}"#,
                if i % 2 == 0 { "Yes" } else { "No" }
            )
        } else {
            format!(
                r#"{{"id":"q{i}","question":"What is in sample {i}?","options":[{{"letter":"A","text":"thing {i}a"}},{{"letter":"B","text":"thing {i}b"}},{{"letter":"C","text":"thing {i}c"}},{{"letter":"D","text":"thing {i}d"}}],"answer":"{}","task_type":"multiple_choice","source":"demo","category":{{"task":"reasoning","sub":"LR"}}}}"#,
                ["A", "B", "C", "D"][i % 4]
            )
        };
        lines.push_str(&line);
        lines.push('\n');
    }
    std::fs::write(dir.join("items.jsonl"), lines).unwrap();
}

fn write_plan(dir: &Path) {
    std::fs::write(
        dir.join("plan.toml"),
        r#"run_id = "cli-run"
items = "items.jsonl"
seed = 42
n_baseline_samples = 1

[source.sim]
base_accuracy = 1.0
susceptibility = 1.0
noise = 0.0

[[conditions]]
kind = "explicit"
templates = ["TrueAnswer"]
placement = "after_question"
repeat = 1
"#,
    )
    .unwrap();
}

#[test]
fn unknown_subcommand_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = flipbench(dir.path(), &["definitely-not-a-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_error_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = flipbench(dir.path(), &["ingest", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn templates_list_prints_twelve_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = flipbench(dir.path(), &["templates", "list"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 12);
}

#[test]
fn ingest_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    write_items(dir.path());
    let out = flipbench(dir.path(), &["ingest", "items.jsonl"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("24 items"), "{stdout}");
    assert!(stdout.contains("16 multiple-choice"), "{stdout}");
    assert!(stdout.contains("8 yes/no"), "{stdout}");
}

#[test]
fn full_sim_workflow_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    write_items(dir.path());
    write_plan(dir.path());
    let base = ["--plan", "plan.toml", "--store", "store.jsonl"];

    let out = flipbench(dir.path(), &[&base[..], &["run", "baseline"]].concat());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = flipbench(dir.path(), &[&base[..], &["run", "mislead"]].concat());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    // Metrics as JSON validate against the typed report schema.
    let out = flipbench(
        dir.path(),
        &[
            "--store",
            "store.jsonl",
            "metrics",
            "--run",
            "cli-run",
            "--items",
            "items.jsonl",
            "--format",
            "json",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: MetricReport =
        serde_json::from_slice(&out.stdout).expect("stdout is schema-valid JSON");
    assert_eq!(report.version, 1);
    assert_eq!(report.groups.len(), 1);
    // susceptibility 1 with perfect baseline: every item flips.
    assert_eq!(report.groups[0].rates.true_to_false, Some(1.0));

    // Single-model stratification: every item flipped all 1 of 1 models.
    let out = flipbench(
        dir.path(),
        &[
            "--store",
            "store.jsonl",
            "stratify",
            "--run",
            "cli-run",
            "--total-models",
            "1",
            "--out",
            "strata.json",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("high: 24 items"), "{stdout}");

    let out = flipbench(
        dir.path(),
        &[
            "build-benchmark",
            "--strata",
            "strata.json",
            "--items",
            "items.jsonl",
            "--out",
            "manifest.json",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["total"], 24);
    assert_eq!(manifest["strata"]["high"]["count"], 24);
}

#[test]
fn report_writes_requested_files() {
    let dir = tempfile::tempdir().unwrap();
    write_items(dir.path());
    write_plan(dir.path());
    let base = ["--plan", "plan.toml", "--store", "store.jsonl"];
    flipbench(dir.path(), &[&base[..], &["run", "baseline"]].concat());
    flipbench(dir.path(), &[&base[..], &["run", "mislead"]].concat());

    // A consistency run so the scatter has a y-axis.
    std::fs::write(
        dir.path().join("plan-cr.toml"),
        r#"run_id = "cli-run-cr"
items = "items.jsonl"
seed = 43
n_baseline_samples = 8

[source.sim]
base_accuracy = 1.0
susceptibility = 0.0
noise = 0.6

[[conditions]]
kind = "explicit"
templates = ["TrueAnswer"]
placement = "after_question"
repeat = 1
"#,
    )
    .unwrap();
    let out = flipbench(
        dir.path(),
        &["--plan", "plan-cr.toml", "--store", "store.jsonl", "run", "consistency"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let out = flipbench(
        dir.path(),
        &[
            "--store",
            "store.jsonl",
            "report",
            "--run",
            "cli-run",
            "--run",
            "cli-run-cr",
            "--items",
            "items.jsonl",
            "--group-by",
            "question_type",
            "--format",
            "json",
            "--format",
            "csv",
            "--format",
            "text",
            "--format",
            "svg",
            "--out",
            "reports",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["report.json", "report.csv", "report.txt", "scatter.csv", "scatter.svg"] {
        let path = dir.path().join("reports").join(name);
        assert!(path.exists(), "missing {name}");
        assert!(std::fs::metadata(&path).unwrap().len() > 0, "{name} is empty");
    }
    // Two groups (multiple_choice, yes_no) x 8 metrics in long format.
    let csv = std::fs::read_to_string(dir.path().join("reports/report.csv")).unwrap();
    assert_eq!(csv.lines().count() - 1, 2 * 8);
    let svg = std::fs::read_to_string(dir.path().join("reports/scatter.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 24, "one marker per item");
}

#[test]
fn sweep_single_point_reports_undefined_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let out = flipbench(
        dir.path(),
        &[
            "simulate-sweep",
            "--susceptibilities",
            "0.5",
            "--items",
            "100",
            "--samples",
            "4",
            "--work-dir",
            "sweepwork",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("spearman(MR, CR) undefined"), "{stdout}");
}

#[test]
fn build_finetune_via_cli_excludes_benchmark_items() {
    let dir = tempfile::tempdir().unwrap();
    write_items(dir.path());

    // Hand-written strata: half benchmark (low), half pool.
    let low: Vec<String> = (0..12).map(|i| format!("q{i}")).collect();
    let pool: Vec<String> = (12..24).map(|i| format!("q{i}")).collect();
    let strata = serde_json::json!([
        {"level": "low", "item_ids": low},
        {"level": "medium", "item_ids": []},
        {"level": "high", "item_ids": []},
        {"level": "finetune_pool", "item_ids": pool},
        {"level": "unused", "item_ids": []}
    ]);
    std::fs::write(dir.path().join("strata.json"), strata.to_string()).unwrap();
    let out = flipbench(
        dir.path(),
        &[
            "build-benchmark",
            "--strata",
            "strata.json",
            "--items",
            "items.jsonl",
            "--out",
            "manifest.json",
        ],
    );
    assert_eq!(out.status.code(), Some(0));

    let out = flipbench(
        dir.path(),
        &[
            "build-finetune",
            "--strata",
            "strata.json",
            "--manifest",
            "manifest.json",
            "--items",
            "items.jsonl",
            "--n-explicit",
            "6",
            "--n-implicit",
            "0",
            "--strategy",
            "s5",
            "--out",
            "train.jsonl",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let train = std::fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 30, "6 items x 5 single-template lines");
    for line in train.lines() {
        let parsed: serde_json::Value = serde_json::from_str(line).unwrap();
        let messages = parsed["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 3);
        assert_eq!(messages[0]["role"], "system");
        assert_eq!(messages[1]["role"], "user");
        assert_eq!(messages[2]["role"], "assistant");
        // Training queries come from the pool half only.
        let user = messages[1]["content"].as_str().unwrap();
        for i in 0..12 {
            assert!(!user.contains(&format!("sample {i}?")), "benchmark item leaked: {user}");
        }
    }
}
