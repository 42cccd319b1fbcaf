use std::path::Path;
use std::process::{Command, Output};

use hvm_cli::RunConfig;
use proptest::prelude::*;

fn hvm(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hvm"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HVM_SEED")
        .output()
        .unwrap()
}

fn run_dir(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .unwrap()
        .to_string()
}

#[test]
fn help_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hvm(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn bad_mask_ratio_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hvm(dir.path(), &["synthgen", "--set", "model.mask_ratio=1.0"]);
    assert_eq!(out.status.code(), Some(hvm_cli::EXIT_VALIDATION));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mask ratio out of range"));
    assert!(!dir.path().join("runs").exists(), "no run directory on validation failure");
}

#[test]
fn unknown_key_and_missing_input_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hvm(dir.path(), &["synthgen", "--set", "model.nope=1"]).status.code(), Some(hvm_cli::EXIT_VALIDATION));
    assert_eq!(hvm(dir.path(), &["pretrain"]).status.code(), Some(hvm_cli::EXIT_VALIDATION));
}

#[test]
fn unreadable_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hvm(dir.path(), &["pretrain", "--set", "data.manifest=missing.tsv"]);
    assert_eq!(out.status.code(), Some(hvm_cli::EXIT_RUNTIME));
}

#[test]
fn seed_flag_overrides_environment_and_names_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hvm"))
        .args(["synthgen", "--seed", "9", "--set", "synth.n=8", "--set", "model.frames=4", "--set", "model.size=12"])
        .current_dir(dir.path())
        .env("HVM_SEED", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    let run = run_dir(&out);
    assert!(run.ends_with("-s9"), "{run}");
    let cfg = RunConfig::load(&dir.path().join(&run).join("config.toml")).unwrap();
    assert_eq!(cfg.seed, 9);
    let sums = std::fs::read_to_string(dir.path().join(&run).join("outputs.sha256")).unwrap();
    assert!(sums.lines().any(|l| l.ends_with("manifest.tsv")));
}

#[test]
fn repeated_runs_get_distinct_directories() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["synthgen", "--set", "synth.n=4", "--set", "model.frames=2", "--set", "model.size=12"];
    let a = run_dir(&hvm(dir.path(), &args));
    let b = run_dir(&hvm(dir.path(), &args));
    assert_ne!(a, b);
    assert_eq!(b, format!("{a}-2"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn canonical_config_is_a_fixed_point(seed in 0..=i64::MAX as u64, ratio in 0.0f64..0.99, n in 4usize..200) {
        let cfg = RunConfig::default()
            .with_overrides(&[format!("seed={seed}"), format!("model.mask_ratio={ratio}"), format!("synth.n={n}")])
            .unwrap();
        let text = cfg.canonical();
        let again = RunConfig::from_toml(&text).unwrap();
        prop_assert_eq!(again.canonical(), text);
        prop_assert_eq!(again.hash(), cfg.hash());
    }
}

#[test]
fn seed_beyond_toml_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = hvm(dir.path(), &["synthgen", "--seed", "18446744073709551615"]);
    assert_eq!(out.status.code(), Some(hvm_cli::EXIT_VALIDATION));
}
