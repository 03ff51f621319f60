use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn shopfocus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shopfocus"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generated_stream_runs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let gen = shopfocus(&["gen", "--out", path(&out), "--seed", "2", "--clean"]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));

    let f = |name: &str| out.join(name);
    let (cat, tax, det, tr, co, cfg) = (
        f("catalog.jsonl"),
        f("taxonomy.tsv"),
        f("detections.jsonl"),
        f("transcripts.jsonl"),
        f("comments.jsonl"),
        f("engine.toml"),
    );
    let run = |extra: &[&str]| {
        let mut args = vec![
            "run", "--catalog", path(&cat), "--taxonomy", path(&tax), "--detections", path(&det), "--transcripts", path(&tr),
            "--comments", path(&co), "--config", path(&cfg),
        ];
        args.extend_from_slice(extra);
        shopfocus(&args)
    };
    let first = run(&[]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let lines: Vec<Value> = std::str::from_utf8(&first.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.len() >= 10, "{lines:?}");
    for (i, seg) in lines.iter().enumerate() {
        assert_eq!(seg["segment_id"], i as u64 + 1);
        assert_eq!(seg["stream_id"], "live");
    }
    assert_eq!(run(&["--stream-id", "live"]).stdout, first.stdout);
}

#[test]
fn trained_model_loads_into_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    assert!(shopfocus(&["gen", "--out", path(&out), "--seed", "4"]).status.success());
    let model = dir.path().join("model.bin");
    let train = shopfocus(&["train", "--out", path(&model), "--scenes", "2", "--epochs", "2"]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let f = |name: &str| out.join(name);
    let run = shopfocus(&[
        "run", "--catalog", path(&f("catalog.jsonl")), "--taxonomy", path(&f("taxonomy.tsv")), "--detections",
        path(&f("detections.jsonl")), "--config", path(&f("engine.toml")), "--model", path(&model),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(!run.stdout.is_empty());
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let missing = shopfocus(&["run", "--catalog", "/nope/c.jsonl", "--taxonomy", "/nope/t.tsv", "--detections", "/nope/d.jsonl"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nope/t.tsv"));
    assert!(!shopfocus(&["run", "--linger"]).status.success());
    assert!(!shopfocus(&["train", "--out", "/tmp/x", "--scenes", "0"]).status.success());
}
