use std::path::Path;
use std::process::{Command, Output};

fn april(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_april"))
        .args(args)
        .env_remove("APRIL_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn train_tiny(out: &Path, variant: &str, seeds: &str) -> Output {
    april(&[
        "train",
        "--variant",
        variant,
        "--seeds",
        seeds,
        "--episodes",
        "4",
        "--resolution",
        "24",
        "--workers",
        "2",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn invalid_arguments_print_usage_and_fail() {
    for args in [
        vec![],
        vec!["fly"],
        vec!["train", "--variant", "ppo"],
        vec!["train", "--resolution", "32"],
        vec!["evaluate", "--class", "ext5"],
    ] {
        let o = april(&args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("usage"), "{args:?}");
    }
}

#[test]
fn grad_check_passes() {
    let o = april(&["grad-check"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("ok")).count(), 6, "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn grad_check_fails_at_an_impossible_tolerance() {
    let o = april(&["grad-check", "--tolerance", "0"]);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn train_evaluate_export_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = train_tiny(out, "april", "2");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for seed in [0, 1] {
        let run = out.join(format!("april/seed{seed}"));
        for f in ["config.txt", "log.csv", "checkpoints/ep000004.ckpt"] {
            assert!(run.join(f).exists(), "{f} missing for seed {seed}");
        }
        let config = std::fs::read_to_string(run.join("config.txt")).unwrap();
        assert!(config.contains(&format!("seed = {seed}")));
        assert!(config.contains("resolution = 24"));
        assert_eq!(std::fs::read_to_string(run.join("log.csv")).unwrap().lines().count(), 5);
    }

    let o = april(&[
        "evaluate", "--variant", "april", "--class", "ext4", "--count", "3", "--workers", "2", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("april/eval.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("april,train,2,3,") && lines[2].starts_with("april,ext4,2,3,"));
    assert!(out.join("april/seed0/eval.csv").exists());

    // evaluation is a pure function of checkpoint and domain seeds
    let again = april(&[
        "evaluate", "--variant", "april", "--class", "ext4", "--count", "3", "--workers", "1", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(again.status.success());
    assert_eq!(std::fs::read_to_string(out.join("april/eval.csv")).unwrap(), report);

    let o = april(&["export-attention", "--episodes", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let att = out.join("april/seed1/attention/train");
    for f in ["ep000_t000_mask.png", "ep000_t000_overlay.png", "ep000_t000_frame.png", "state_attention.csv"] {
        assert!(att.join(f).exists(), "{f} missing");
    }

    let o = april(&["plot", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["learning_curve.png", "learning_curve.csv", "evaluation.png", "evaluation.csv"] {
        assert!(out.join("plots").join(f).exists(), "{f} missing");
    }
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_april"))
        .args(["train", "--variant", "asym-ddpg", "--episodes", "1", "--resolution", "24", "--workers", "1"])
        .arg("--out")
        .arg(dir.path())
        .env("APRIL_SEED", "42")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let config = std::fs::read_to_string(dir.path().join("asym-ddpg/seed42/config.txt")).unwrap();
    assert!(config.contains("seed = 42"));
}

#[test]
fn evaluating_without_runs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = april(&["evaluate", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no runs"));
}
