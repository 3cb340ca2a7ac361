use std::path::Path;
use std::process::{Command, Output};

use aef_cli::RunConfig;

fn aef(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aef"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Small single-tone config that trains in well under a second.
fn write_config(dir: &Path) -> std::path::PathBuf {
    let text = r#"{
        "version": 1,
        "seeds": [1],
        "agent": "qlearning",
        "output_dir": "runs",
        "env": {"max_steps": 15, "fft_size": 1024, "sample_rate": 4096000.0, "synthesis": {"harmonics": 1}},
        "hyper": {"episodes": 3},
        "dataset": {"synthetic": {"name": "tone", "band_low": 100000.0, "band_high": 2000000.0, "line_count": 1,
                    "amplitude_range_dbua": [38.0, 38.0], "line_band": [100000.0, 110000.0]}, "synthetic_seed": 7},
        "eval": {"episodes": 2}
    }"#;
    let path = dir.join("run.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn synth_writes_the_requested_lines_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        ok(&aef(
            dir.path(),
            &[
                "synth",
                "--band",
                "150000:30000000",
                "--lines",
                "12",
                "--seed",
                "4",
                "--out",
                name,
            ],
        ));
    }
    let a = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(dir.path().join("b.csv")).unwrap());
    let ds = aef_core::signal::load_dataset(dir.path().join("a.csv"), 150e3, 30e6).unwrap();
    assert_eq!(ds.len(), 12);
}

#[test]
fn invalid_band_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    for band in ["5e6:1e5", "abc"] {
        let out = aef(dir.path(), &["synth", "--band", band, "--lines", "3"]);
        assert_eq!(out.status.code(), Some(2), "band {band}");
    }
}

#[test]
fn dumped_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&aef(dir.path(), &["train", "--dump-config", "--seed", "3,4"]));
    let cfg = RunConfig::from_json(&text).unwrap();
    assert_eq!(cfg.seeds, [3, 4]);
    std::fs::write(dir.path().join("dumped.json"), &text).unwrap();
    let again = ok(&aef(dir.path(), &["train", "--dump-config", "--config", "dumped.json"]));
    assert_eq!(again, text);
}

#[test]
fn sweep_prints_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let csv = ok(&aef(dir.path(), &["sweep", "--config", "run.json", "--steps", "16"]));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("c_farads,emi_dbua,avg_il_db"));
    assert_eq!(lines.count(), 16);
}

#[test]
fn train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    ok(&aef(dir.path(), &["train", "--config", "run.json"]));
    let seed = dir.path().join("runs/qlearning/seed_1");
    for f in ["episodes.csv", "steps.csv", "trainlog.json", "snapshot.json"] {
        assert!(seed.join(f).is_file(), "{f}");
    }
    assert!(dir.path().join("runs/qlearning/config.json").is_file());

    ok(&aef(dir.path(), &["eval", "--config", "run.json"]));
    let eval = dir.path().join("runs/qlearning/eval/seed_1");
    for f in ["report.json", "insertion_loss.csv", "rewards.csv", "curves.svg"] {
        assert!(eval.join(f).is_file(), "{f}");
    }

    ok(&aef(dir.path(), &["eval", "--config", "run.json", "--no-rl"]));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("runs/baseline/eval/seed_1/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["cum_reward_mean"], 0.0);

    let table = ok(&aef(dir.path(), &["report", "--config", "run.json"]));
    assert!(table.contains("qlearning"));
    let summary = std::fs::read_to_string(dir.path().join("runs/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn mismatched_snapshot_exits_with_dimension_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path());
    ok(&aef(dir.path(), &["train", "--config", "run.json"]));
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.env.obs_bins = 10;
    std::fs::write(dir.path().join("other.json"), cfg.to_json().unwrap()).unwrap();
    let out = aef(
        dir.path(),
        &[
            "eval",
            "--config",
            "other.json",
            "--snapshot",
            "runs/qlearning/seed_1/snapshot.json",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn report_without_logs_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = aef(dir.path(), &["report", "--out", "nothing"]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn repeated_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    ok(&aef(dir.path(), &["train", "--config", "run.json", "--out", "a"]));
    ok(&aef(dir.path(), &["train", "--config", "run.json", "--out", "b"]));
    let read = |root: &str, f: &str| std::fs::read(dir.path().join(root).join("qlearning/seed_1").join(f)).unwrap();
    assert_eq!(read("a", "snapshot.json"), read("b", "snapshot.json"));
    assert_eq!(read("a", "steps.csv"), read("b", "steps.csv"));
}
