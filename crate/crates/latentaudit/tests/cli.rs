//! The `latentaudit` binary: exit codes, stage dependencies, idempotence.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use latentaudit::pipeline::{read_run_log, LOCK_FILE};
use latentaudit::render::{read_sequence_report, REPORT_HEADER};

/// Small enough to run every stage in well under a minute.
const TINY: &str = r#"{
  "version": 1,
  "seed": 7,
  "resolution": 32,
  "latent_dim": 16,
  "dataset": { "synthetic": { "n_per_group": 120 } },
  "gan": { "base_channels": 16, "training": { "steps": 2000, "batch_size": 32, "checkpoint_interval": 1000 } },
  "classifier": { "max_epochs": 4 },
  "projection": { "n_per_class": 24, "batch_size": 16, "optimizer": { "steps": 100, "mean_latent_samples": 1000 } },
  "traverse": { "k": 3, "sequences": 4 }
}"#;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_latentaudit"));
    cmd.env_remove("LATENTAUDIT_DEVICE").env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str], config: Option<&Path>, run_dir: &Path) -> Output {
    let mut cmd = bin();
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.arg("--run-dir").arg(run_dir).args(args);
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn a_stage_without_its_inputs_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["traverse"], None, &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("fit-direction"), "{}", stderr(&out));

    let out = run(&["evaluate"], None, &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("\"traverse\""), "{}", stderr(&out));

    let out = run(&["ingest"], None, &dir.path().join("run"));
    assert!(stderr(&out).contains("\"synth\""), "{}", stderr(&out));
}

#[test]
fn unsupported_device_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("LATENTAUDIT_DEVICE", "cuda:0")
        .args(["--run-dir", dir.path().to_str().unwrap(), "synth"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("LATENTAUDIT_DEVICE"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(bin().arg("no-such-stage").output().unwrap().status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    assert_eq!(run(&["run-all", "--stage", "nope"], None, &run_dir).status.code(), Some(1));
    assert!(!run_dir.exists(), "a rejected command leaves no run directory behind");
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn config_problems_map_to_their_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let missing = dir.path().join("absent.json");
    assert_eq!(run(&["synth"], Some(&missing), &run_dir).status.code(), Some(2));

    let bad = write_config(dir.path(), r#"{"version": 1, "resolution": 48}"#);
    let out = run(&["synth"], Some(&bad), &run_dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("resolution"));

    let unknown = write_config(dir.path(), r#"{"version": 1, "gan": {"stepz": 3}}"#);
    assert_eq!(run(&["synth"], Some(&unknown), &run_dir).status.code(), Some(1));
}

#[test]
fn a_locked_run_dir_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(LOCK_FILE), "12345\n").unwrap();
    let out = run(&["synth"], None, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("locked"), "{}", stderr(&out));
    assert!(dir.path().join(LOCK_FILE).exists(), "someone else's lock must survive");
}

#[test]
fn corrupt_cached_images_are_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run_dir = dir.path().join("run");
    assert!(run(&["run-all", "--stage", "ingest"], Some(&cfg), &run_dir).status.success());
    std::fs::write(run_dir.join("ingest/images.bin"), b"LATIMG\0\0garbage").unwrap();
    let out = run(&["train-clf"], Some(&cfg), &run_dir);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("images.bin"));
}

#[test]
fn tiny_run_end_to_end_then_skips_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run_dir = dir.path().join("run");

    let out = run(&["run-all", "--stage", "train-clf"], Some(&cfg), &run_dir);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(run_dir.join("train-clf/classifier.bin").exists());
    assert!(!run_dir.join("project").exists(), "--stage stops after the named stage");

    let out = run(&["run-all"], Some(&cfg), &run_dir);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("synth: skipped") && text.contains("project: completed"), "{text}");
    assert!(!run_dir.join(LOCK_FILE).exists(), "lock released");

    for file in [
        "synth/manifest.csv",
        "ingest/manifest.csv",
        "train-gan/checkpoint.bin",
        "train-gan/checkpoint.json",
        "train-gan/losses.csv",
        "train-gan/checkpoints/step_0001000.bin",
        "train-clf/evaluation.csv",
        "project/samples.csv",
        "project/latents.bin",
        "fit-direction/direction.json",
        "traverse/montage.png",
        "traverse/report.csv",
        "evaluate/summary.json",
        "evaluate/report.csv",
    ] {
        assert!(run_dir.join(file).exists(), "missing {file}");
    }
    let report = run_dir.join("traverse/report.csv");
    let header = std::fs::read_to_string(&report).unwrap();
    assert!(header.starts_with(&REPORT_HEADER.join(",")));
    let rows = read_sequence_report(&report).unwrap();
    assert_eq!(rows.len(), 4 * 4, "4 sequences of k+1 frames");
    for row in &rows {
        assert!((row.p_class_a + row.p_class_b - 1.0).abs() < 1e-6);
        let name = format!("{}_{}.png", row.sequence_id, row.frame_idx);
        assert!(row.frame_path.ends_with(&name));
        assert!(run_dir.join("traverse").join(&row.frame_path).exists());
    }
    let summary = latentaudit::evaluate::EvaluationSummary::read(&run_dir.join("evaluate/summary.json")).unwrap();
    assert_eq!(summary.direction.sequences, 4);
    assert!(summary.direction.pixel_alignment.is_some());

    let before = std::fs::read(&report).unwrap();
    let out = run(&["run-all"], Some(&cfg), &run_dir);
    assert!(out.status.success());
    assert_eq!(stdout(&out).matches("skipped").count(), 8, "{}", stdout(&out));
    assert_eq!(std::fs::read(&report).unwrap(), before);
    let log = read_run_log(&run_dir).unwrap();
    assert_eq!(log.iter().filter(|e| e.status == "skipped").count(), 8 + 4);
    assert!(log.iter().all(|e| !e.config_digest.is_empty()));
    let traverse = log.iter().find(|e| e.stage == "traverse" && e.status == "completed").unwrap();
    assert!(traverse.input_digests.contains_key("fit-direction/direction.json"));

    // A changed traverse setting is refused until forced; upstream stays put.
    let changed = TINY.replace(r#""sequences": 4"#, r#""sequences": 2"#);
    let cfg2 = write_config(dir.path(), &changed);
    let out = run(&["traverse"], Some(&cfg2), &run_dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--force"), "{}", stderr(&out));
    let mut cmd = bin();
    let out = cmd
        .args(["--config", cfg2.to_str().unwrap(), "--run-dir", run_dir.to_str().unwrap(), "--force", "traverse"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(read_sequence_report(&report).unwrap().len(), 2 * 4);
    // evaluate saw a new traverse output and reruns without forcing.
    let out = run(&["evaluate"], Some(&cfg2), &run_dir);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("evaluate: completed"));
}
