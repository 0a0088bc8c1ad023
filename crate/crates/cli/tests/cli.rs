//! End-to-end tests of the `policyopt` binary and the command layer:
//! exit codes, file outputs, determinism of reruns, checkpoint round trips.

use std::path::Path;
use std::process::Command;

use policyopt_cli::checkpoint::{read_checkpoint, write_checkpoint};
use policyopt_cli::commands::{cmd_train, TrainArgs};
use policyopt_cli::config::parse_config;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_policyopt"))
}

fn write_config(dir: &Path, name: &str, json: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

const SMALL_TRAIN: &str = r#"{
    "task": {"kind": "copy_last", "vocab_size": 6, "max_len": 3},
    "objective": "sspo",
    "train": {"learning_rate": 0.05, "total_updates": 8, "seed": 1, "B": 4, "G": 4}
}"#;

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["train", "gates", "gradcheck", "compare"] {
        assert!(text.contains(sub), "help missing {sub}");
    }
}

#[test]
fn unknown_subcommand_exits_one() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_rejects_config_with_missing_gate_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{
            "task": {"kind": "copy_last"},
            "objective": "sspo",
            "gate": {"tau_pos": 1.0, "eps_low": 0.2, "eps_high": 0.2},
            "train": {"learning_rate": 0.05, "total_updates": 5}
        }"#,
    );
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tau_neg"), "stderr: {err}");
}

#[test]
fn train_without_output_dir_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_TRAIN);
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("output_dir"), "stderr: {err}");
}

#[test]
fn train_writes_expected_files_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_TRAIN);
    for sub in ["a", "b"] {
        let out = bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(sub))
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for file in ["metrics.csv", "config_echo.json", "checkpoint.bin"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    let metrics = std::fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("update_index,mean_reward"));
    // 8 updates x E=2 x M=2 default steps.
    assert_eq!(lines.count(), 32);
}

#[test]
fn zero_learning_rate_leaves_the_uniform_policy_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        &SMALL_TRAIN.replace("\"learning_rate\": 0.05", "\"learning_rate\": 0.0"),
    );
    let out_dir = dir.path().join("out");
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let params = read_checkpoint(&out_dir.join("checkpoint.bin")).unwrap();
    assert!(params.logits.iter().all(|&x| x == 0.0));
}

#[test]
fn periodic_checkpoints_written_at_interval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_TRAIN);
    let out_dir = dir.path().join("out");
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .args(["--checkpoint-every", "4"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out_dir.join("checkpoint_000004.bin").exists());
    assert!(out_dir.join("checkpoint_000008.bin").exists());
    assert!(out_dir.join("checkpoint.bin").exists());
}

#[test]
fn divergence_exits_two_and_keeps_partial_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{
            "task": {"kind": "copy_last", "vocab_size": 6, "max_len": 3,
                     "reward_mode": "fractional"},
            "objective": "sapo",
            "train": {"learning_rate": 1e10, "optimizer": "sgd",
                      "total_updates": 20, "B": 4, "G": 4}
        }"#,
    );
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("divergence at update"), "stderr: {err}");
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(metrics.lines().count() >= 2, "partial metrics missing");
}

#[test]
fn final_params_round_trip_through_checkpoint_bit_exactly() {
    let cfg = parse_config(SMALL_TRAIN).unwrap();
    let run = policyopt_core::trainer::train(&cfg.train).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snap.bin");
    write_checkpoint(&path, &run.final_params).unwrap();
    let loaded = read_checkpoint(&path).unwrap();
    for (a, b) in run.final_params.logits.iter().zip(loaded.logits.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn config_echo_reparses_to_the_same_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "cfg.json", SMALL_TRAIN);
    let out_dir = dir.path().join("out");
    let args = TrainArgs {
        config: cfg_path,
        out: Some(out_dir.clone()),
        checkpoint_every: None,
    };
    cmd_train(&args).unwrap();
    let echo = std::fs::read_to_string(out_dir.join("config_echo.json")).unwrap();
    let resolved = parse_config(SMALL_TRAIN).unwrap();
    let re_resolved = parse_config(&echo).unwrap();
    assert_eq!(resolved, re_resolved);
}

#[test]
fn gates_grid_contract_and_identities() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gates.csv");
    let status = bin()
        .args([
            "gates",
            "--rho-min",
            "0.5",
            "--rho-max",
            "2.0",
            "--steps",
            "31",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 31);
    let rhos: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(
        rhos.windows(2).all(|w| w[0] < w[1]),
        "rho not strictly increasing"
    );
    let unity_row = rows
        .iter()
        .find(|r| r.starts_with("1.00000000e0,"))
        .expect("grid contains rho = 1 exactly");
    let cols: Vec<&str> = unity_row.split(',').collect();
    assert_eq!(cols[5], "1.00000000e0"); // sspo_gate
    assert_eq!(cols[6], "1.00000000e0"); // f_ratio
    assert_eq!(cols[7], "1.00000000e0"); // local_weight
    let last = rows.last().unwrap();
    let cols: Vec<&str> = last.split(',').collect();
    assert_eq!(cols[0], "2.00000000e0");
    assert_eq!(cols[5], "2.19328005e0"); // exp(pi/4) at tau_pos = 1
}

#[test]
fn gates_rejects_bad_grid() {
    let out = bin()
        .args([
            "gates",
            "--rho-min",
            "0",
            "--steps",
            "10",
            "--out",
            "/dev/null",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_unknown_objective_lists_kinds() {
    let out = bin()
        .args(["gradcheck", "--objective", "trpo"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("grpo") && err.contains("sspo"),
        "stderr: {err}"
    );
}

#[test]
fn gradcheck_passes_and_impossible_tolerance_fails_with_worst_coord() {
    let ok = bin()
        .args(["gradcheck", "--objective", "gmpo", "--seed", "3"])
        .output()
        .unwrap();
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(text.contains("PASS"));

    let fail = bin()
        .args([
            "gradcheck",
            "--objective",
            "gmpo",
            "--rtol",
            "0",
            "--atol",
            "0",
        ])
        .output()
        .unwrap();
    assert_eq!(fail.status.code(), Some(2));
    let err = String::from_utf8_lossy(&fail.stderr);
    assert!(err.contains("worst coord"), "stderr: {err}");
}

#[test]
fn compare_is_deterministic_and_reports_variance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{
            "task": {"kind": "repeat_n", "vocab_size": 6, "max_len": 3, "n": 2},
            "objective": "sspo",
            "train": {"learning_rate": 0.05, "total_updates": 10, "B": 4, "G": 4}
        }"#,
    );
    for sub in ["a", "b"] {
        let out = bin()
            .args(["compare", "--config"])
            .arg(&cfg)
            .args(["--objectives", "grpo,sspo", "--seeds", "1,0"])
            .arg("--out")
            .arg(dir.path().join(sub))
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let a = std::fs::read(dir.path().join("a/summary.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/summary.csv")).unwrap();
    assert_eq!(a, b, "summary.csv differs between identical invocations");

    let summary = String::from_utf8_lossy(&a).to_string();
    let mut lines = summary.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("objective,seed,final_mean_reward"));
    // Rows sorted by canonical objective order then seed, one per cell.
    let keys: Vec<String> = lines
        .map(|l| {
            let mut it = l.split(',');
            format!("{},{}", it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    assert_eq!(keys, vec!["grpo,0", "grpo,1", "sspo,0", "sspo,1"]);

    let report = std::fs::read_to_string(dir.path().join("a/variance_report.txt")).unwrap();
    assert!(report.contains("direction:"), "report: {report}");
    for cell in ["metrics_grpo_seed0.csv", "metrics_sspo_seed1.csv"] {
        assert!(dir.path().join("a/cells").join(cell).exists());
    }
}

#[test]
fn same_seed_differs_across_objectives() {
    // Cells are keyed by (objective, seed): the same seed must not replay
    // the same rollout stream under a different objective.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{
            "task": {"kind": "copy_last", "vocab_size": 6, "max_len": 3},
            "objective": "sspo",
            "train": {"learning_rate": 0.0, "total_updates": 2, "B": 4, "G": 4}
        }"#,
    );
    let out_dir = dir.path().join("out");
    let status = bin()
        .args(["compare", "--config"])
        .arg(&cfg)
        .args(["--objectives", "grpo,sspo", "--seeds", "7"])
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    // With lr = 0 both cells run the identical uniform policy; any metric
    // difference comes purely from the per-objective stream keying.
    let grpo = std::fs::read_to_string(out_dir.join("cells/metrics_grpo_seed7.csv")).unwrap();
    let sspo = std::fs::read_to_string(out_dir.join("cells/metrics_sspo_seed7.csv")).unwrap();
    let col = |csv: &str| -> Vec<String> {
        csv.lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().to_string())
            .collect()
    };
    assert_ne!(
        col(&grpo),
        col(&sspo),
        "objective keying did not separate streams"
    );

    // A 1x1 matrix yields exactly one summary row.
    let single_dir = dir.path().join("single");
    let status = bin()
        .args(["compare", "--config"])
        .arg(&cfg)
        .args(["--objectives", "grpo", "--seeds", "7"])
        .arg("--out")
        .arg(&single_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let summary = std::fs::read_to_string(single_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.lines().nth(1).unwrap().starts_with("grpo,7,"));
}
