use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

fn mcul(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcul"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_spec(dir: &Path, body: &str) -> String {
    let p = dir.join("spec.json");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SPEC: &str = r#"{
    "dataset": {"kind": "synthetic", "classes": 4, "dim": 4, "samples": 1200, "separation": 4.0, "seed": 2},
    "weakening": {"unlabeled_fraction": 0.0},
    "training": {"estimator": "mcl", "learning_rate": 0.05, "batch_size": 64,
                 "max_iterations": 300, "eval_every": 100},
    "trials": 2,
    "seed": 5
}"#;

#[test]
fn gen_weak_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();

    let o = mcul(&["gen-weak", "--config", &spec, "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("weak_train.jsonl").exists());
    assert!(out.join("test.csv").exists());

    let weak = out.join("weak_train.jsonl");
    let o = mcul(&[
        "train",
        "--config",
        &spec,
        "--out",
        out_s,
        "--weak",
        weak.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let model = out.join("model.json");
    let ck: serde_json::Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(ck["spec_hash"].as_str().unwrap().len(), 64);

    let test = out.join("test.csv");
    let o = mcul(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--data",
        test.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let acc: f64 = stdout(&o)
        .trim()
        .strip_prefix("accuracy ")
        .unwrap()
        .parse()
        .unwrap();
    assert!(acc > 0.85, "{acc}");
}

#[test]
fn train_from_config_writes_history_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let o = mcul(&["train", "--config", &spec, "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        fs::read(a.join("model.json")).unwrap(),
        fs::read(b.join("model.json")).unwrap()
    );
    let hist = fs::read_to_string(a.join("history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 4);
    assert!(hist.starts_with("iteration,risk,val_accuracy"));

    // a different seed changes the hash and the model
    let c = dir.path().join("c");
    let o = mcul(&[
        "train",
        "--config",
        &spec,
        "--out",
        c.to_str().unwrap(),
        "--seed",
        "6",
    ]);
    assert!(o.status.success());
    assert_ne!(
        fs::read(a.join("model.json")).unwrap(),
        fs::read(c.join("model.json")).unwrap()
    );
}

#[test]
fn eval_of_zero_model_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    // balanced 10-class data with a zero linear model written by hand
    let mut csv = String::new();
    for i in 0..200 {
        csv.push_str(&format!("{},{},{}\n", i % 7, i % 3, i % 10 + 1));
    }
    let data = dir.path().join("d.csv");
    fs::write(&data, csv).unwrap();
    let params = vec![0.0f64; 2 * 10 + 10];
    let bytes: Vec<u8> = params.iter().flat_map(|p| p.to_le_bytes()).collect();
    let model = serde_json::json!({
        "format": "mcul-model", "version": 1,
        "architecture": {"kind": "linear"}, "input_dim": 2, "num_classes": 10,
        "num_params": 30, "params_f64_le": STANDARD.encode(&bytes)
    });
    let mp = dir.path().join("m.json");
    fs::write(&mp, model.to_string()).unwrap();
    let o = mcul(&[
        "eval",
        "--model",
        mp.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let acc: f64 = stdout(&o)
        .trim()
        .strip_prefix("accuracy ")
        .unwrap()
        .parse()
        .unwrap();
    assert!((acc - 0.1).abs() < 0.02, "{acc}");
}

#[test]
fn sweep_prints_mean_std_table() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let out = dir.path().join("s");
    let o = mcul(&[
        "sweep",
        "--config",
        &spec,
        "--out",
        out.to_str().unwrap(),
        "--estimators",
        "mcl,ordinary",
        "--trials",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("dataset"));
    assert_eq!(text.matches('±').count(), 4, "{text}");
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("dataset,mcl,ordinary\nsynthetic-k4-d4,"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(json["cells"][0]["accuracies"].as_array().unwrap().len(), 2);
}

#[test]
fn verify_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcul(&["verify", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.len() > 30);
    assert!(checks.iter().all(|c| c["passed"] == true));
    assert!(dir.path().join("verify.json").exists());
}

#[test]
fn rate_prints_slopes() {
    let o = mcul(&[
        "rate",
        "--trials",
        "100",
        "--grid",
        "100,1000,10000,20000",
        "--estimator",
        "mcl",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("estimator,n,mean_abs_error,sd_abs_error,slope"));
    assert_eq!(text.matches("\nmcl,").count(), 4);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_spec(
        dir.path(),
        r#"{"dataset": {"kind": "csv", "path": "/missing.csv"},
        "training": {"estimator": "mcl", "learning_rate": 0.1, "batch_size": 8, "max_iterations": 1}}"#,
    );
    assert_eq!(mcul(&["train", "--config", &bad]).status.code(), Some(2));

    let spec = write_spec(dir.path(), SPEC);
    assert_eq!(
        mcul(&["train", "--config", &spec, "--trials", "0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        mcul(&["train", "--config", &spec, "--unlabeled-fraction", "lots"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        mcul(&["train", "--config", &spec, "--estimator", "nope"])
            .status
            .code(),
        Some(2)
    );
    // gamma > 0 but the config leaves no sample unlabeled
    let o = mcul(&[
        "train",
        "--config",
        &spec,
        "--estimator",
        "mcul",
        "--gamma",
        "0.5",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(mcul(&["rate", "--grid", "10,20"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        &SPEC.replace("\"learning_rate\": 0.05", "\"learning_rate\": 1e308"),
    );
    let o = mcul(&[
        "train",
        "--config",
        &spec,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn unlabeled_override_accepts_auto() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let out = dir.path().join("w");
    let o = mcul(&[
        "gen-weak",
        "--config",
        &spec,
        "--out",
        out.to_str().unwrap(),
        "--unlabeled-fraction",
        "auto",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // 1080 training rows, 99% of 1200 -> unlabeled mask covers round(0.99 * 1080)
    let text = stdout(&o);
    assert!(text.contains("unlabeled 1069"), "{text}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["spec"]["weakening"]["unlabeled_fraction"], "auto");
}
