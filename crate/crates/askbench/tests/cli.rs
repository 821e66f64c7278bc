//! Drives the compiled binary end to end: every subcommand, resume after an
//! interrupted run, and the overwrite guard.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn golden_toml() -> PathBuf {
    manifest_dir().join("data/configs/golden.toml")
}

fn dataset() -> PathBuf {
    manifest_dir().join("data/pack.json")
}

fn askbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_askbench")).args(args).output().unwrap()
}

fn run_golden(out_dir: &Path) -> Output {
    let out = askbench(&[
        "run",
        "--config",
        golden_toml().to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_writes_artifacts_and_prints_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_golden(tmp.path());

    let text = stdout(&out);
    assert!(text.contains("| scripted | CoT + AwN |"), "{text}");
    assert!(text.contains("| scripted | DFSDT |"), "{text}");

    let run_dir = tmp.path().join("golden");
    for name in ["manifest.json", "results.json", "report.json", "report.md", "report.csv"] {
        assert!(run_dir.join(name).exists(), "{name} missing");
    }
    let transcripts = std::fs::read_dir(run_dir.join("episodes"))
        .unwrap()
        .filter(|e| {
            e.as_ref().unwrap().path().extension().is_some_and(|ext| ext == "jsonl")
        })
        .count();
    assert_eq!(transcripts, 32);

    let csv = std::fs::read_to_string(run_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("model,strategy,category,episodes,a1,a1_any,a2,a3,redundancy,steps"));
    assert!(csv.contains("scripted,cot,IBTC,2,0,0,,,,5.5"), "{csv}");
}

#[test]
fn second_run_is_refused_but_resume_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    run_golden(tmp.path());

    let again = askbench(&[
        "run",
        "--config",
        golden_toml().to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!again.status.success());
    assert!(stderr(&again).contains("already completed"), "{}", stderr(&again));

    // Interrupt: drop the completion marker and two finished episodes.
    let run_dir = tmp.path().join("golden");
    std::fs::remove_file(run_dir.join("manifest.json")).unwrap();
    std::fs::remove_file(run_dir.join("episodes/scripted__cot__imki-alarm.jsonl")).unwrap();
    std::fs::remove_file(run_dir.join("episodes/scripted__dfsdt-awn__ibtc-stock.jsonl")).unwrap();

    let resumed = askbench(&[
        "run",
        "--config",
        golden_toml().to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--resume",
        "golden",
    ]);
    assert!(resumed.status.success(), "{}", stderr(&resumed));
    let summary = stderr(&resumed);
    assert!(summary.contains("2 episodes executed"), "{summary}");
    assert!(summary.contains("30 resumed"), "{summary}");
    assert!(run_dir.join("manifest.json").exists());
}

#[test]
fn evaluate_rescored_transcripts_match_the_run_report() {
    let tmp = tempfile::tempdir().unwrap();
    run_golden(tmp.path());
    let run_dir = tmp.path().join("golden");

    let eval_out = tmp.path().join("rescored");
    let out = askbench(&[
        "evaluate",
        "--dataset",
        dataset().to_str().unwrap(),
        "--transcripts",
        run_dir.join("episodes").to_str().unwrap(),
        "--similarity-threshold",
        "0.7",
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("| scripted | DFSDT + AwN |"));

    let rescored: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_out.join("report.json")).unwrap())
            .unwrap();
    let original: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(rescored, original);
}

#[test]
fn report_renders_stored_results_in_both_formats() {
    let tmp = tempfile::tempdir().unwrap();
    run_golden(tmp.path());
    let results = tmp.path().join("golden/results.json");

    let md = askbench(&["report", "--results", results.to_str().unwrap()]);
    assert!(md.status.success());
    assert!(stdout(&md).contains("| Model | Framework |"));

    let csv = askbench(&["report", "--results", results.to_str().unwrap(), "--format", "csv"]);
    assert!(csv.status.success());
    assert!(stdout(&csv).contains("scripted,dfsdt+awn,IBTC,2,1,1,,,,1.5"), "{}", stdout(&csv));

    let out_file = tmp.path().join("table.csv");
    let to_file = askbench(&[
        "report",
        "--results",
        results.to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        out_file.to_str().unwrap(),
    ]);
    assert!(to_file.status.success());
    assert_eq!(std::fs::read_to_string(out_file).unwrap(), stdout(&csv));
}

#[test]
fn validate_dataset_accepts_the_bundled_pack_and_rejects_duplicates() {
    let ok = askbench(&["validate-dataset", "--dataset", dataset().to_str().unwrap()]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("8 cases: 0 errors, 0 warnings"), "{}", stdout(&ok));

    let tmp = tempfile::tempdir().unwrap();
    let broken = tmp.path().join("broken.json");
    let case = serde_json::json!({
        "id": "twin", "category": "IMKI", "query": "Do the thing.",
        "apis": [{"name": "do_thing", "description": "d", "parameters": []}],
        "expected_exchanges": [{"question": "Which thing?", "answer": "That one."}],
        "expected_calls": [{"api": "do_thing", "arguments": {}}],
    });
    let doc = serde_json::json!({"version": 1, "cases": [case, case]});
    std::fs::write(&broken, doc.to_string()).unwrap();

    let bad = askbench(&["validate-dataset", "--dataset", broken.to_str().unwrap()]);
    assert!(!bad.status.success());
    let text = format!("{}{}", stdout(&bad), stderr(&bad));
    assert!(text.contains("[error]"), "{text}");
    assert!(text.contains("twin"), "{text}");
}

#[test]
fn stats_prints_the_category_table() {
    let out = askbench(&["stats", "--dataset", dataset().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for label in ["IMKI", "IMR", "IwE", "IBTC"] {
        assert!(text.contains(label), "{text}");
    }
    assert!(text.contains("0.560"), "{text}");
    assert!(text.contains("8"), "{text}");
}

#[test]
fn strategy_and_awn_filters_limit_the_lanes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = askbench(&[
        "run",
        "--config",
        golden_toml().to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--strategy",
        "cot",
        "--awn",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let transcripts = std::fs::read_dir(tmp.path().join("golden/episodes"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|ext| ext == "jsonl"))
        .count();
    assert_eq!(transcripts, 8);
    let text = stdout(&out);
    assert!(text.contains("| scripted | CoT + AwN |"), "{text}");
    assert!(!text.contains("| scripted | DFSDT |"), "{text}");
}
