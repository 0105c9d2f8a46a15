//! End-to-end runs of the `servtime` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn servtime(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_servtime"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = servtime(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

/// Value of `key=` in a `k=v k=v` line.
fn field<'a>(line: &'a str, key: &str) -> &'a str {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {line}"))
}

#[test]
fn service_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--family", "h-pt", "--horizon", "300", "--seed", "1", "--out", "trace.csv"]);
    assert!(d.join("trace.csv.config").exists());
    let split = ok(
        d,
        &[
            "ingest", "--data", "trace.csv", "--horizon", "300", "--out", "train.csv", "--test-fraction", "0.2",
            "--test-out", "test.csv",
        ],
    );
    let train_h = field(split.trim(), "train_horizon").to_string();
    ok(
        d,
        &[
            "train-rpp", "--data", "train.csv", "--horizon", &train_h, "--hidden", "4", "--epochs", "2", "--out",
            "rpp.ckpt",
        ],
    );
    ok(
        d,
        &[
            "train-ns", "--data", "train.csv", "--horizon", &train_h, "--rpp", "rpp.ckpt", "--family", "gamma",
            "--hidden", "8", "--epochs", "3", "--lr", "1e-3", "--out", "ns.ckpt",
        ],
    );
    std::fs::write(d.join("adv.conf"), "variant = ras\nepochs = 1\nbptt = 16\n# small\ngen_hidden = 8\n").unwrap();
    ok(
        d,
        &[
            "train-adv", "--config", "adv.conf", "--data", "train.csv", "--horizon", &train_h, "--rpp", "rpp.ckpt",
            "--critic-hidden", "8", "--out", "adv.ckpt",
        ],
    );
    let adv_cfg = String::from_utf8(read(d, "adv.ckpt.config")).unwrap();
    assert!(adv_cfg.starts_with("# train-adv\n"));
    assert!(adv_cfg.contains("variant = ras\n") && adv_cfg.contains("critic-hidden = 8\n"));

    for model in ["ns.ckpt", "adv.ckpt"] {
        let pred = format!("{model}.pred.csv");
        ok(
            d,
            &[
                "predict", "--model", model, "--rpp", "rpp.ckpt", "--data", "test.csv", "--horizon", "300",
                "--context", "train.csv", "--n-samples", "20", "--out", &pred,
            ],
        );
        let text = String::from_utf8(read(d, &pred)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("arrival_time,service_time,predicted_mean"));
        assert!(lines.all(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap() > 0.0));

        let report = format!("{model}.json");
        let line = ok(
            d,
            &[
                "evaluate", "--model", model, "--rpp", "rpp.ckpt", "--data", "test.csv", "--horizon", "300",
                "--context", "train.csv", "--n-samples", "20", "--report", &report, "--qq", "qq.csv",
            ],
        );
        let v: serde_json::Value = serde_json::from_slice(&read(d, &report)).unwrap();
        for key in ["error", "ks", "qq_pairs", "n_events", "n_censored", "baseline_error"] {
            assert!(v.get(key).is_some(), "{key} missing");
        }
        assert_eq!(field(&line, "n_events"), v["n_events"].to_string());
    }

    let s = ok(d, &["sample-rpp", "--model", "rpp.ckpt", "--horizon", "50", "--seed", "3"]);
    assert!(s.starts_with("arrival_time,departure_time"));
}

#[test]
fn mempool_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate-mempool", "--rate", "5", "--block-rate", "1", "--horizon", "80", "--seed", "2", "--out", "mp.csv"]);
    let text = String::from_utf8(read(d, "mp.csv")).unwrap();
    assert!(text.starts_with("block_time,unconfirmed_count,accepted_count\n"));
    for variant in ["nms-g", "ams"] {
        let ck = format!("{variant}.ckpt");
        ok(
            d,
            &[
                "train-mempool", "--variant", variant, "--data", "mp.csv", "--epochs", "2", "--state-dim", "4",
                "--head-hidden", "6", "--bptt", "16", "--out", &ck,
            ],
        );
        ok(d, &["predict", "--model", &ck, "--data", "mp.csv", "--n-samples", "5", "--out", "mp_pred.csv"]);
        let pred = String::from_utf8(read(d, "mp_pred.csv")).unwrap();
        assert!(pred.starts_with("block_time,unconfirmed_count,predicted_unconfirmed\n"));
        ok(d, &["evaluate", "--model", &ck, "--data", "mp.csv", "--report", "mp.json"]);
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let runs: Vec<(PathBuf, tempfile::TempDir)> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let d = tmp.path();
            ok(d, &["simulate", "--family", "nh-ps", "--horizon", "150", "--seed", "9", "--out", "t.csv"]);
            ok(d, &["train-rpp", "--data", "t.csv", "--horizon", "150", "--hidden", "3", "--epochs", "2", "--seed", "4", "--out", "r.ckpt"]);
            ok(d, &["sample-rpp", "--model", "r.ckpt", "--horizon", "40", "--seed", "5", "--out", "s.csv"]);
            (d.to_path_buf(), tmp)
        })
        .collect();
    for name in ["t.csv", "r.ckpt", "s.csv", "r.ckpt.config"] {
        assert_eq!(read(&runs[0].0, name), read(&runs[1].0, name), "{name} differs");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let code = |args: &[&str]| servtime(d, args).status.code().unwrap();
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["simulate", "--bogus", "1"]), 2);
    assert_eq!(code(&["train-rpp", "--data", "missing.csv", "--horizon", "10", "--out", "x"]), 3);
    assert_eq!(code(&["simulate", "--family", "h-pt", "--horizon", "10"]), 4);
    assert_eq!(code(&["simulate", "--family", "nope", "--horizon", "10", "--out", "x.csv"]), 4);
    std::fs::write(d.join("bad.conf"), "horizon = 10\nunknown_key = 3\n").unwrap();
    assert_eq!(code(&["simulate", "--config", "bad.conf", "--family", "h-pt", "--out", "x.csv"]), 4);
    let out = servtime(d, &["train-rpp", "--data", "missing.csv", "--horizon", "10", "--out", "x"]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.lines().any(|l| l.starts_with("servtime: error[")), "{err}");
    assert!(servtime(d, &["--help"]).status.success());
}
