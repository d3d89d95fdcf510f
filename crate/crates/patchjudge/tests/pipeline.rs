//! End-to-end runs of the installed binary: every subcommand, exit
//! codes, and the files each one leaves behind.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchjudge"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} exited with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_err(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        !out.status.success(),
        "{args:?} unexpectedly succeeded\nstdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth_corpus(dir: &Path, per_class: usize) -> String {
    let corpus = dir.join("corpus.jsonl");
    run_ok(&[
        "synth",
        "--per-class",
        &per_class.to_string(),
        "--seed",
        "7",
        "--out",
        corpus.to_str().unwrap(),
    ]);
    corpus.to_str().unwrap().to_string()
}

const TINY_MODEL: &[&str] = &[
    "--vocab-size",
    "400",
    "--layers",
    "1",
    "--heads",
    "2",
    "--model-dim",
    "8",
    "--ffn-dim",
    "16",
    "--max-len",
    "32",
    "--attn-dropout",
    "0",
    "--hidden-dropout",
    "0",
    "--learning-rate",
    "0.001",
    "--batch-size",
    "4",
    "--dropout",
    "0",
    "--max-epochs",
    "1",
    "--seed",
    "7",
];

#[test]
fn synth_vocab_train_predict_flow() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 3);

    let vocab = dir.path().join("vocab.txt");
    run_ok(&[
        "vocab",
        "--dataset",
        &corpus,
        "--size",
        "400",
        "--out",
        vocab.to_str().unwrap(),
    ]);
    let vocab_text = fs::read_to_string(&vocab).unwrap();
    assert_eq!(vocab_text.lines().next(), Some("[PAD]"));

    let run_dir = dir.path().join("run");
    let mut train_args = vec!["train", "--dataset", &corpus];
    train_args.extend_from_slice(TINY_MODEL);
    train_args.extend_from_slice(&["--out-dir", run_dir.to_str().unwrap()]);
    run_ok(&train_args);

    let model_dir = run_dir.join("model");
    for file in ["params.pjt1", "model.meta", "vocab.txt"] {
        assert!(model_dir.join(file).is_file(), "missing {file}");
    }
    let loss = fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("epoch,step,loss"));
    assert!(loss.lines().count() > 1);

    let first_record = fs::read_to_string(&corpus)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    let record: serde_json::Value = serde_json::from_str(&first_record).unwrap();
    let diff_path = dir.path().join("fix.diff");
    fs::write(&diff_path, record["diff"].as_str().unwrap()).unwrap();

    let stdout = run_ok(&[
        "predict",
        "--model",
        model_dir.to_str().unwrap(),
        "--diff",
        diff_path.to_str().unwrap(),
    ]);
    let verdict: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    let label = verdict["label"].as_str().unwrap();
    assert!(
        label == "correct" || label == "overfitting",
        "label {label:?}"
    );
    let p = verdict["p_overfitting"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p), "p_overfitting {p}");
}

#[test]
fn ingest_keeps_good_patches_and_reports_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    fs::create_dir(&raw).unwrap();
    let good = "@@ -1,1 +1,1 @@\n- int a = 0;\n+ int a = 1;";
    fs::write(raw.join("one.diff"), good).unwrap();
    fs::write(raw.join("two.patch"), good.replace("int a", "int b")).unwrap();
    fs::write(raw.join("broken.diff"), "garbage with no hunks").unwrap();

    let merged = dir.path().join("merged.jsonl");
    let stdout = run_ok(&[
        "ingest",
        raw.to_str().unwrap(),
        "--out",
        merged.to_str().unwrap(),
    ]);
    assert!(stdout.contains('2'), "summary missing count: {stdout}");

    let kept = fs::read_to_string(&merged).unwrap();
    assert_eq!(kept.lines().count(), 2);
    let rejects = fs::read_to_string(dir.path().join("merged.jsonl.rejects")).unwrap();
    assert_eq!(rejects.lines().count(), 1);
    assert!(rejects.contains("broken"), "rejects: {rejects}");
}

#[test]
fn ingest_fails_on_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = dir.path().join("out.jsonl");
    let stderr = run_err(&[
        "ingest",
        empty.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stderr.contains("error:"), "stderr: {stderr}");
}

#[test]
fn ingest_passes_jsonl_through() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 3);
    let out = dir.path().join("again.jsonl");
    run_ok(&["ingest", &corpus, "--out", out.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 6);
}

#[test]
fn dedup_drops_whitespace_equal_diffs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let diff = "@@ -1,1 +1,1 @@\\n- a;\\n+ b;";
    let spaced = "@@ -1,1 +1,1 @@\\n-  a;\\n+  b;";
    let other = "@@ -1,1 +1,1 @@\\n- x;\\n+ y;";
    fs::write(
        &input,
        format!(
            "{{\"id\":\"p1\",\"diff\":\"{diff}\"}}\n{{\"id\":\"p2\",\"diff\":\"{spaced}\"}}\n{{\"id\":\"p3\",\"diff\":\"{other}\"}}\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("out.jsonl");
    let stdout = run_ok(&[
        "dedup",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 2);
    assert!(stdout.contains('1'), "summary missing drop count: {stdout}");
}

#[test]
fn evaluate_writes_report_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 4);
    let eval_dir = dir.path().join("eval");
    let mut args = vec!["evaluate", "--dataset", &corpus];
    args.extend_from_slice(TINY_MODEL);
    args.extend_from_slice(&[
        "--folds",
        "2",
        "--reducer",
        "averaged",
        "--out-dir",
        eval_dir.to_str().unwrap(),
    ]);
    let stdout = run_ok(&args);
    assert!(stdout.contains("accuracy"), "stdout: {stdout}");

    for file in [
        "report.json",
        "fold0.metrics.json",
        "fold1.metrics.json",
        "fold0.loss.csv",
        "folds.audit.csv",
        "config.txt",
    ] {
        assert!(eval_dir.join(file).is_file(), "missing {file}");
    }
    let audit = fs::read_to_string(eval_dir.join("folds.audit.csv")).unwrap();
    assert_eq!(audit.lines().next(), Some("fold,role,item_id"));
}

#[test]
fn ablate_writes_fusion_grid() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 3);
    let out_dir = dir.path().join("ablate");
    let mut args = vec!["ablate", "--dataset", &corpus];
    args.extend_from_slice(TINY_MODEL);
    args.extend_from_slice(&[
        "--folds",
        "2",
        "--axis",
        "fusion",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    run_ok(&args);
    let grid = fs::read_to_string(out_dir.join("ablate_fusion.csv")).unwrap();
    assert_eq!(grid.lines().count(), 6);
}

#[test]
fn predict_fails_cleanly_without_model() {
    let dir = tempfile::tempdir().unwrap();
    let diff_path = dir.path().join("fix.diff");
    fs::write(&diff_path, "@@ -1,1 +1,1 @@\n- a;\n+ b;").unwrap();
    let missing = dir.path().join("no-model");
    let stderr = run_err(&[
        "predict",
        "--model",
        missing.to_str().unwrap(),
        "--diff",
        diff_path.to_str().unwrap(),
    ]);
    assert!(stderr.contains("error:"), "stderr: {stderr}");
}

#[test]
fn zero_learning_rate_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 3);
    let out_dir = dir.path().join("eval");
    let stderr = run_err(&[
        "evaluate",
        "--dataset",
        &corpus,
        "--learning-rate",
        "0",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(stderr.contains("learning_rate"), "stderr: {stderr}");
}

#[test]
fn config_file_drives_training() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 3);
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "# tiny training setup\n\
             [data]\n\
             dataset = {corpus}\n\
             vocab_size = 400\n\n\
             [model]\n\
             layers = 1\n\
             heads = 2\n\
             model_dim = 8\n\
             ffn_dim = 16\n\
             max_len = 32\n\
             attn_dropout = 0\n\
             hidden_dropout = 0\n\n\
             [train]\n\
             learning_rate = 0.001\n\
             batch_size = 4\n\
             dropout = 0\n\
             max_epochs = 3\n\
             seed = 7\n"
        ),
    )
    .unwrap();

    let run_dir = dir.path().join("run");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--max-epochs",
        "1",
        "--out-dir",
        run_dir.to_str().unwrap(),
    ]);
    assert!(run_dir.join("model").join("params.pjt1").is_file());

    let echoed = fs::read_to_string(run_dir.join("config.txt")).unwrap();
    assert!(
        echoed.contains("max_epochs = 1"),
        "override not reflected: {echoed}"
    );
}
