//! End-to-end checks of the `gaa` binary: the full subcommand round trip
//! on a small synthetic dataset, plus exit-code contracts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gaa"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str], want_code: i32) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert_eq!(
        out.status.code(),
        Some(want_code),
        "command {:?} should exit {want_code}\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Small dataset and config shared by the happy-path test.
fn synth_into(dir: &Path) -> PathBuf {
    run_ok(&[
        "synth",
        "--out-dir",
        dir.to_str().unwrap(),
        "--nodes",
        "30",
        "--extra-edges",
        "25",
        "--modules",
        "4",
        "--module-size-min",
        "3",
        "--module-size-max",
        "6",
        "--compounds",
        "40",
        "--targets-per-compound",
        "2",
        "--positive-ratio",
        "0.35",
        "--seed",
        "13",
    ]);
    dir.join("config.toml")
}

const SMALL_MODEL: &[&str] = &[
    "--set",
    "model.n_heads=2",
    "--set",
    "model.gat1_dim=4",
    "--set",
    "model.gat2_dim=4",
    "--set",
    "model.decoder_dim=4",
    "--set",
    "model.mlp_hidden=8",
    "--set",
    "diffusion.alphas=[0.3, 0.6]",
];

#[test]
fn full_pipeline_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_into(dir.path());
    let cfg = cfg.to_str().unwrap();

    let out = run_ok(&["diffuse", "--config", cfg]);
    assert!(stdout(&out).contains("cached diffusion features for 40 compounds"));
    assert!(dir.path().join("cache").is_dir());

    let mut train_args = vec![
        "train",
        "--config",
        cfg,
        "--max-epochs",
        "4",
        "--deterministic",
    ];
    train_args.extend_from_slice(SMALL_MODEL);
    let out = run_ok(&train_args);
    assert!(stdout(&out).contains("best validation F1"));
    let out_dir = dir.path().join("out");
    let ckpt = out_dir.join("checkpoint-gaa.json");
    assert!(ckpt.exists());
    assert!(out_dir.join("train-log.jsonl").exists());
    assert!(out_dir.join("resolved-config.toml").exists());
    let log = fs::read_to_string(out_dir.join("train-log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4, "one record per epoch");
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "train_loss", "lc", "lr_loss", "val_acc", "val_f1", "val_aupr"] {
        assert!(first.get(key).is_some(), "log line missing {key}");
    }

    let ckpt_s = ckpt.to_str().unwrap();
    let mut eval_args = vec!["evaluate", "--config", cfg, "--checkpoint", ckpt_s];
    eval_args.extend_from_slice(SMALL_MODEL);
    let text = stdout(&run_ok(&eval_args));
    assert!(text.contains("ACC"), "header row present: {text}");
    assert!(text.contains("GAA"), "model row present: {text}");
    assert!(out_dir.join("eval-gaa-test.json").exists());

    let mut predict_args = vec![
        "predict",
        "--config",
        cfg,
        "--checkpoint",
        ckpt_s,
        "--threshold",
        "0.0",
    ];
    predict_args.extend_from_slice(SMALL_MODEL);
    let text = stdout(&run_ok(&predict_args));
    assert!(text.contains("scored 40 compounds; 40 at or above probability 0"));
    let tsv = fs::read_to_string(out_dir.join("predictions.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 41, "header plus one row per compound");
    assert!(tsv.starts_with("rank\tcompound_id\tprobability\tflagged\n"));

    let mut report_args = vec!["report", "--config", cfg, "--checkpoint", ckpt_s];
    report_args.extend_from_slice(SMALL_MODEL);
    let text = stdout(&run_ok(&report_args));
    assert!(text.starts_with("pathway\tmean_abs_pos\tmean_abs_neg\tdifference"));
    assert_eq!(text.lines().count(), 5, "header plus one row per module");

    // baseline shares the pipeline and flags its assumptions
    let mut btrain = vec!["train", "--config", cfg, "--model", "baseline"];
    btrain.extend_from_slice(SMALL_MODEL);
    let text = stdout(&run_ok(&btrain));
    assert!(text.contains("assumes single-alpha diffusion"));
    let bckpt = out_dir.join("checkpoint-baseline.json");
    let mut beval = vec![
        "evaluate",
        "--config",
        cfg,
        "--checkpoint",
        bckpt.to_str().unwrap(),
        "--split",
        "val",
    ];
    beval.extend_from_slice(SMALL_MODEL);
    let text = stdout(&run_ok(&beval));
    assert!(text.contains("Baseline"));
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();

    // missing config file
    let out = run_err(
        &["train", "--config", "/nonexistent/nope.toml"],
        2,
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    // config with no paths set; the rejected run must not drop a
    // resolved-config.toml into the working directory
    let empty_cfg = dir.path().join("empty.toml");
    fs::write(&empty_cfg, "").unwrap();
    run_err(&["train", "--config", empty_cfg.to_str().unwrap()], 2);
    assert!(!std::path::Path::new("resolved-config.toml").exists());

    // checkpoint trained on a different graph
    let cfg_a = synth_into(&dir.path().join("a"));
    let dir_b = dir.path().join("b");
    run_ok(&[
        "synth",
        "--out-dir",
        dir_b.to_str().unwrap(),
        "--nodes",
        "30",
        "--extra-edges",
        "25",
        "--modules",
        "4",
        "--module-size-min",
        "3",
        "--module-size-max",
        "6",
        "--compounds",
        "40",
        "--targets-per-compound",
        "2",
        "--positive-ratio",
        "0.35",
        "--seed",
        "99",
    ]);
    let cfg_b = dir_b.join("config.toml");
    let mut btrain = vec![
        "train",
        "--config",
        cfg_a.to_str().unwrap(),
        "--model",
        "baseline",
    ];
    btrain.extend_from_slice(SMALL_MODEL);
    run_ok(&btrain);
    let ckpt_a = dir.path().join("a").join("out").join("checkpoint-baseline.json");
    let out = run_err(
        &[
            "predict",
            "--config",
            cfg_b.to_str().unwrap(),
            "--checkpoint",
            ckpt_a.to_str().unwrap(),
        ],
        2,
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("graph"));

    // threshold outside [0, 1]
    run_err(
        &[
            "predict",
            "--config",
            cfg_a.to_str().unwrap(),
            "--checkpoint",
            ckpt_a.to_str().unwrap(),
            "--threshold",
            "1.5",
        ],
        2,
    );

    // diffuse without a cache directory
    let no_cache = dir.path().join("nocache.toml");
    let body = fs::read_to_string(&cfg_a)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("cache_dir"))
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&no_cache, body).unwrap();
    run_err(&["diffuse", "--config", no_cache.to_str().unwrap()], 2);

    // usage errors from the argument parser also exit 2
    run_err(&["no-such-subcommand"], 2);
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_into(dir.path());
    let mut args = vec![
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--max-epochs",
        "5",
        "--set",
        "train.lr=1e60",
    ];
    args.extend_from_slice(SMALL_MODEL);
    let out = run_err(&args, 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    // the last good checkpoint was still saved
    assert!(dir.path().join("out").join("checkpoint-gaa.json").exists());
}
