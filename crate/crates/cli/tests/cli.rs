use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn stpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stpp")).args(args).output().expect("spawn stpp")
}

fn ok(args: &[&str]) -> Output {
    let out = stpp(args);
    assert!(out.status.success(), "stpp {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, seed: &str, sequences: &str) {
    ok(&["simulate", "--kernel", "1d-exp", "--sequences", sequences, "--seed", seed, "--out", p(dir)]);
}

fn fit(data: &Path, out: &Path, epochs: &str, resume: Option<&Path>) -> Output {
    let mut args = vec!["fit", "--data", p(data), "--epochs", epochs, "--batch-size", "8", "--lr", "0.01", "--seed", "4", "--out", p(out)];
    if let Some(r) = resume {
        args.extend(["--resume", p(r)]);
    }
    args.push("--threads");
    args.push("2");
    stpp(&args)
}

#[test]
fn simulate_is_byte_identical_for_equal_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    simulate(&a, "11", "20");
    simulate(&b, "11", "20");
    simulate(&c, "12", "20");
    let da = fs::read(a.join("dataset.jsonl")).unwrap();
    assert_eq!(da, fs::read(b.join("dataset.jsonl")).unwrap());
    assert_ne!(da, fs::read(c.join("dataset.jsonl")).unwrap());
    assert!(a.join("config.toml").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(stpp(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(stpp(&["fit", "--epochs", "many"]).status.code(), Some(1));
    assert_eq!(stpp(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_checkpoint_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "1", "10");
    let out = tmp.path().join("eval");
    let res = stpp(&["eval", "--checkpoint", p(&tmp.path().join("none.json")), "--data", p(&sim.join("dataset.jsonl")), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "2", "10");
    let out = tmp.path().join("fit");
    let res = fit(&sim.join("dataset.jsonl"), &out, "0", None);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let ck: Value = serde_json::from_str(&fs::read_to_string(out.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ck["state"]["epoch"], 0);
    assert_eq!(ck["state"]["batches"], 0);
    let curve = fs::read_to_string(out.join("train_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1);
}

#[test]
fn empty_dataset_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "3", "0");
    let res = fit(&sim.join("dataset.jsonl"), &tmp.path().join("fit"), "1", None);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("error"));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "5", "24");
    let data = sim.join("dataset.jsonl");
    let full = tmp.path().join("full");
    let half = tmp.path().join("half");
    let rest = tmp.path().join("rest");
    assert!(fit(&data, &full, "4", None).status.success());
    assert!(fit(&data, &half, "2", None).status.success());
    let res = fit(&data, &rest, "4", Some(&half.join("checkpoint.json")));
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let a: Value = serde_json::from_str(&fs::read_to_string(full.join("checkpoint.json")).unwrap()).unwrap();
    let b: Value = serde_json::from_str(&fs::read_to_string(rest.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(a["state"]["epoch"], 4);
    for key in ["mu", "alpha", "psi", "phi", "u", "v", "state"] {
        assert_eq!(a[key], b[key], "{key} differs after resume");
    }
    assert_eq!(
        fs::read(full.join("train_curve.csv")).unwrap(),
        fs::read(rest.join("train_curve.csv")).unwrap()
    );
}

#[test]
fn eval_rank_and_predict_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "6", "20");
    let data = sim.join("dataset.jsonl");
    let fitted = tmp.path().join("fit");
    assert!(fit(&data, &fitted, "1", None).status.success());
    let ev = tmp.path().join("eval");
    ok(&["eval", "--checkpoint", p(&fitted.join("checkpoint.json")), "--data", p(&data), "--seed", "4", "--out", p(&ev)]);
    let report: Value = serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert!(report["test_loglik_per_event"].as_f64().unwrap().is_finite());
    assert!(report["mre"].as_f64().unwrap() >= 0.0);
    for f in ["heatmap_true.csv", "heatmap_fitted.csv", "intensity_curve.csv"] {
        assert!(ev.join(f).exists(), "{f}");
    }

    let self_eval = tmp.path().join("truth");
    ok(&["eval", "--checkpoint", "truth", "--data", p(&data), "--out", p(&self_eval)]);
    let report: Value = serde_json::from_str(&fs::read_to_string(self_eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mre"].as_f64().unwrap(), 0.0);
    assert_eq!(report["test_loglik_per_event"], report["truth_loglik_per_event"]);

    let rk = tmp.path().join("rank");
    ok(&["rank", "--kernel", "1d-infrank", "--grid", "120", "--out", p(&rk)]);
    let rank: Value = serde_json::from_str(&fs::read_to_string(rk.join("rank.json")).unwrap()).unwrap();
    assert!(rank["displacement_rank"].as_u64().unwrap() < rank["history_time_rank"].as_u64().unwrap());

    let pr = tmp.path().join("pred");
    ok(&["predict", "--checkpoint", "truth", "--prefix", p(&data), "--out", p(&pr)]);
    let preds: Value = serde_json::from_str(&fs::read_to_string(pr.join("predictions.json")).unwrap()).unwrap();
    assert_eq!(preds.as_array().unwrap().len(), 20);
}
