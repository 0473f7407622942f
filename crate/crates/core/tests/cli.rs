use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adafuse")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn synth(dir: &Path, samples: &str) -> String {
    let out = dir.join("data");
    assert_eq!(
        code(&[
            "gen-synth",
            "--samples",
            samples,
            "--frames",
            "16",
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
    out.join("manifest.toml").to_str().unwrap().to_string()
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["train", "--help"]), 0);
}

#[test]
fn usage_errors_are_validation_failures() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["train"]), 1);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["param-count", "--mode", "bogus"]), 1);
}

#[test]
fn missing_inputs_are_io_failures() {
    assert_eq!(code(&["folds", "--manifest", "/nonexistent/manifest.toml"]), 2);
    assert_eq!(
        code(&[
            "eval",
            "--checkpoint",
            "/nonexistent/model.ckpt",
            "--manifest",
            "/nonexistent/m.toml"
        ]),
        2
    );
    assert_eq!(code(&["param-count", "--config", "/nonexistent/run.toml"]), 2);
}

#[test]
fn grad_check_subset_and_unknown_module() {
    let out = run(&["grad-check", "--module", "softmax"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS softmax"));
    assert_eq!(code(&["grad-check", "--module", "nothing"]), 1);
    // a tolerance no finite-difference check can meet
    assert_eq!(code(&["grad-check", "--module", "matmul_batched", "--tol", "0"]), 1);
}

#[test]
fn param_count_reports_prefix_share() {
    let out = run(&["param-count", "--preset", "desk", "--mode", "concat"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("prefix `fusion.` 0 "));
}

#[test]
fn gen_synth_rejects_odd_class_count() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&["gen-synth", "--classes", "3", "--out", dir.path().to_str().unwrap()]),
        1
    );
}

#[test]
fn folds_on_wrong_actor_count_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    assert_eq!(
        code(&[
            "gen-synth",
            "--samples",
            "40",
            "--actors",
            "20",
            "--frames",
            "8",
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
    assert_eq!(
        code(&["folds", "--manifest", out.join("manifest.toml").to_str().unwrap()]),
        1
    );
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "48");
    let run_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--manifest",
        &manifest,
        "--epochs",
        "2",
        "--fold",
        "1",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.ckpt", "model.toml", "epochs.log", "report.json"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(run_dir.join("epochs.log")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["fold"], 1);
    assert_eq!(report["eval_samples"], 8);

    let ckpt = run_dir.join("model.ckpt");
    let eval_json = dir.path().join("eval.json");
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        &manifest,
        "--split",
        "fold-1",
        "--report",
        eval_json.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&eval_json).unwrap()).unwrap();
    // eval of the held-out fold reproduces the report written at the end of training
    assert_eq!(eval["accuracy"], report["metrics"]["accuracy"]);

    assert_eq!(
        code(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            &manifest,
            "--split",
            "fold-9"
        ]),
        1
    );

    // a second run into the same directory appends to the epoch log
    run(&[
        "train",
        "--manifest",
        &manifest,
        "--epochs",
        "1",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    let log = std::fs::read_to_string(run_dir.join("epochs.log")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn eval_rejects_mismatched_data() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "24");
    let run_dir = dir.path().join("run");
    assert_eq!(
        code(&[
            "train",
            "--manifest",
            &manifest,
            "--epochs",
            "1",
            "--out",
            run_dir.to_str().unwrap()
        ]),
        0
    );
    let other = dir.path().join("other");
    assert_eq!(
        code(&[
            "gen-synth",
            "--samples",
            "24",
            "--classes",
            "8",
            "--frames",
            "16",
            "--out",
            other.to_str().unwrap()
        ]),
        0
    );
    let ckpt = run_dir.join("model.ckpt");
    assert_eq!(
        code(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            other.join("manifest.toml").to_str().unwrap(),
            "--split",
            "all"
        ]),
        1
    );
}

#[test]
fn corrupt_checkpoint_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "24");
    let run_dir = dir.path().join("run");
    assert_eq!(
        code(&[
            "train",
            "--manifest",
            &manifest,
            "--epochs",
            "1",
            "--out",
            run_dir.to_str().unwrap()
        ]),
        0
    );
    let ckpt = run_dir.join("model.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&ckpt, bytes).unwrap();
    assert_eq!(
        code(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            &manifest,
            "--split",
            "all"
        ]),
        1
    );
}
