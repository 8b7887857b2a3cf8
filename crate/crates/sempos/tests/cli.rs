//! End-to-end tests of the `sempos` command-line tool: exit codes, file
//! determinism, and the full generate → train → evaluate → caption pipeline
//! at miniature dimensions.

use std::path::Path;
use std::process::{Command, Output};

fn sempos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sempos"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn gen_tiny_corpus(dir: &Path, seed: &str) -> (String, String) {
    let features = dir.join(format!("c{seed}.semf")).display().to_string();
    let annotations = dir.join(format!("c{seed}.jsonl")).display().to_string();
    let out = sempos(&[
        "gen-data",
        "--features", &features,
        "--annotations", &annotations,
        "--videos", "6",
        "--refs", "1",
        "--frames", "3",
        "--objects", "2",
        "--concept-dim", "8",
        "--seed", seed,
    ]);
    assert!(out.status.success(), "gen-data failed: {}", stderr(&out));
    (features, annotations)
}

#[test]
fn unknown_subcommand_exits_two() {
    let out = sempos(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_required_args_exit_two() {
    let out = sempos(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    // eval requires exactly one caption source.
    let out = sempos(&["eval", "--annotations", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_file_exits_one_and_names_the_path() {
    let out = sempos(&[
        "pos-stats",
        "--annotations", "/definitely/not/here.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error:"), "unexpected stderr: {err}");
    assert!(err.contains("/definitely/not/here.jsonl"), "no path in: {err}");
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (f1, a1) = gen_tiny_corpus(dir.path(), "11");
    let run1_f = std::fs::read(&f1).unwrap();
    let run1_a = std::fs::read(&a1).unwrap();

    std::fs::remove_file(&f1).unwrap();
    std::fs::remove_file(&a1).unwrap();
    let (f2, a2) = gen_tiny_corpus(dir.path(), "11");
    assert_eq!(run1_f, std::fs::read(&f2).unwrap());
    assert_eq!(run1_a, std::fs::read(&a2).unwrap());

    let (f3, _) = gen_tiny_corpus(dir.path(), "12");
    assert_ne!(run1_f, std::fs::read(&f3).unwrap());
}

#[test]
fn pipeline_trains_evaluates_and_captions_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (features, annotations) = gen_tiny_corpus(dir.path(), "31");
    let checkpoint = dir.path().join("m.semp").display().to_string();

    let out = sempos(&[
        "train",
        "--features", &features,
        "--annotations", &annotations,
        "--checkpoint", &checkpoint,
        "--hidden", "8",
        "--embed", "8",
        "--max-len", "8",
        "--epochs", "2",
        "--batch", "4",
        "--lr", "1e-3",
        "--holdout", "3",
        "--seed", "5",
    ]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));

    // Evaluating the same checkpoint twice must print identical metrics.
    let eval_args = [
        "eval",
        "--annotations", &annotations,
        "--checkpoint", &checkpoint,
        "--features", &features,
    ];
    let first = sempos(&eval_args);
    assert!(first.status.success(), "eval failed: {}", stderr(&first));
    let second = sempos(&eval_args);
    assert_eq!(stdout(&first), stdout(&second));
    assert!(stdout(&first).contains("cider="), "no metrics in: {}", stdout(&first));

    // Captioning to a file and scoring that file reproduces the
    // checkpoint-mode metrics exactly: same decodes, same references.
    let candidates = dir.path().join("cands.tsv").display().to_string();
    let out = sempos(&[
        "caption",
        "--checkpoint", &checkpoint,
        "--features", &features,
        "--annotations", &annotations,
        "--out", &candidates,
    ]);
    assert!(out.status.success(), "caption failed: {}", stderr(&out));
    let scored = sempos(&[
        "eval",
        "--annotations", &annotations,
        "--candidates", &candidates,
    ]);
    assert!(scored.status.success(), "eval --candidates failed: {}", stderr(&scored));
    assert_eq!(stdout(&first), stdout(&scored));
}

#[test]
fn train_accepts_block_removal_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (features, annotations) = gen_tiny_corpus(dir.path(), "47");
    let checkpoint = dir.path().join("cut.semp").display().to_string();

    let out = sempos(&[
        "train",
        "--features", &features,
        "--annotations", &annotations,
        "--checkpoint", &checkpoint,
        "--hidden", "6",
        "--embed", "6",
        "--max-len", "8",
        "--epochs", "1",
        "--batch", "4",
        "--remove", "verb",
        "--remove", "glfb",
        "--seed", "3",
    ]);
    assert!(out.status.success(), "ablated train failed: {}", stderr(&out));

    // The wiring survives the checkpoint: eval loads and runs it.
    let out = sempos(&[
        "eval",
        "--annotations", &annotations,
        "--checkpoint", &checkpoint,
        "--features", &features,
    ]);
    assert!(out.status.success(), "ablated eval failed: {}", stderr(&out));

    let out = sempos(&[
        "train",
        "--features", &features,
        "--annotations", &annotations,
        "--checkpoint", &checkpoint,
        "--epochs", "1",
        "--remove", "nonsense-block",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nonsense-block"));
}

#[test]
fn pos_stats_reports_full_coverage_on_generated_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let (_, annotations) = gen_tiny_corpus(dir.path(), "53");
    let out = sempos(&["pos-stats", "--annotations", &annotations]);
    assert!(out.status.success(), "pos-stats failed: {}", stderr(&out));
    let text = stdout(&out);
    // Grammar-built captions always carry all four components.
    for line in ["det_subject", "verb", "aux_verb", "det_object"] {
        assert!(text.contains(line), "missing {line} in: {text}");
    }
    assert!(text.contains("100.0"), "expected full coverage in: {text}");
}

#[test]
fn gradcheck_command_reports_success_at_toy_dims() {
    let out = sempos(&["gradcheck", "--seed", "9"]);
    assert!(out.status.success(), "gradcheck failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("status=ok"), "unexpected output: {text}");
}
