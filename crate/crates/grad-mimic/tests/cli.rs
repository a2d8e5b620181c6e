//! End-to-end checks of the command-line interface: exit codes, error
//! wording, artifact layout, and byte-level reproducibility.

use std::path::Path;
use std::process::{Command, Output};

use grad_mimic::config::CONFIG_KEYS;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grad-mimic"))
        .current_dir(dir)
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

const TRAIN_CFG: &str = "\
[dataset]
num_classes = 3
per_class = 50
dim = 4
eval_per_class = 30
noise_rho = 0.4

[train]
learning_rate = 0.1
batch_size = 16
epochs = 5
seed = 11

[mimic]
temperature = 0.5
weighting = mimic
";

#[test]
fn verify_theory_prints_a_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["verify-theory", "--trials", "50", "--seed", "7"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    for key in ["lemma1", "lemma2", "theorem1"] {
        assert!(report.get(key).is_some(), "report missing {key}");
    }
    assert_eq!(report["lemma1"]["trials"], 50);
    assert_eq!(report["lemma2"]["violations"], 0);
}

#[test]
fn verify_theory_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["verify-theory", "--trials", "10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--seed"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("Usage"), "stderr: {err}");
    assert!(err.contains("frobnicate"), "stderr: {err}");
}

#[test]
fn help_lists_every_config_key() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [
        "gen-data",
        "train-ref",
        "train",
        "filter",
        "report",
        "verify-theory",
        "experiment",
    ] {
        let out = run(dir.path(), &[sub, "--help"]);
        assert!(out.status.success(), "{sub} --help failed");
        let text = stdout(&out);
        for (key, _) in CONFIG_KEYS {
            let name = key.split('.').nth(1).unwrap();
            assert!(text.contains(name), "{sub} --help is missing {key}");
        }
    }
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("no_seed.cfg"), "[dataset]\nnum_classes = 3\nper_class = 10\ndim = 2\n").unwrap();
    let out = run(
        dir.path(),
        &["gen-data", "--config", "no_seed.cfg", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--seed"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "[dataset]\nnum_classs = 3\n").unwrap();
    let out = run(
        dir.path(),
        &["gen-data", "--config", "bad.cfg", "--seed", "1", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("dataset.num_classs"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn pipeline_produces_artifacts_and_mimic_needs_a_reference() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), TRAIN_CFG).unwrap();
    std::fs::write(
        dir.path().join("clean.cfg"),
        TRAIN_CFG.replace("noise_rho = 0.4", "noise_rho = 0.0"),
    )
    .unwrap();

    let steps: &[&[&str]] = &[
        &["gen-data", "--config", "run.cfg", "--out", "data"],
        &["gen-data", "--config", "clean.cfg", "--out", "clean"],
        &["train-ref", "--config", "clean.cfg", "--data", "clean/dataset.csv", "--out", "ref"],
        &[
            "train", "--config", "run.cfg", "--data", "data/dataset.csv",
            "--ref", "ref/ref_params.json", "--eval", "data/eval.csv", "--out", "train",
        ],
        &["filter", "--config", "run.cfg", "--scores", "train/scores.csv", "--out", "filt"],
        &[
            "report", "--config", "run.cfg", "--scores", "train/scores.csv",
            "--decision", "filt/decision.csv", "--data", "data/dataset.csv", "--out", "rep",
        ],
    ];
    for args in steps {
        let out = run(dir.path(), args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            stderr(&out)
        );
    }
    for artifact in [
        "data/dataset.csv",
        "data/eval.csv",
        "ref/ref_params.json",
        "train/params.json",
        "train/scores.csv",
        "train/train_summary.json",
        "filt/votes.csv",
        "filt/decision.csv",
        "rep/report.json",
    ] {
        assert!(dir.path().join(artifact).is_file(), "missing {artifact}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rep/report.json")).unwrap())
            .unwrap();
    let f1 = report["detection_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1), "F1 out of range: {f1}");

    // Mimic weighting without a reference is refused by key name.
    let out = run(
        dir.path(),
        &["train", "--config", "run.cfg", "--data", "data/dataset.csv", "--out", "t2"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("mimic.weighting"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), TRAIN_CFG).unwrap();
    let out = run(
        dir.path(),
        &["train-ref", "--config", "run.cfg", "--data", "nope.csv", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn experiment_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.cfg"),
        format!("{TRAIN_CFG}\n[experiment]\nkind = denoise\nseed = 1234\n"),
    )
    .unwrap();
    for out_dir in ["e1", "e2"] {
        let out = run(
            dir.path(),
            &["experiment", "--config", "exp.cfg", "--out", out_dir],
        );
        assert!(out.status.success(), "stderr: {}", stderr(&out));
    }
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("e1"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 2, "expected one JSON and one CSV: {names:?}");
    for name in &names {
        let a = std::fs::read(dir.path().join("e1").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("e2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}
