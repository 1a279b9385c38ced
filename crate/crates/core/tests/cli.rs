use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

use immersion::model::Dataset;

const BIN: &str = env!("CARGO_BIN_EXE_immersion");

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(cmd: &str, config: &Path) -> Output {
    Command::new(BIN).arg(cmd).arg("--config").arg(config).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_report(dir: &Path, name: &str) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap();
    v["report"].clone()
}

fn segment_config(n: usize) -> Value {
    json!({
        "data": {
            "generator": { "shape": "segment", "d": 2, "n": n, "seed": 3 },
            "train_fraction": 0.5
        },
        "model": {
            "m": 1,
            "interval": [-1.0, 1.0],
            "family": { "kind": "constant", "dim": 2, "max_norm": 1.0 },
            "encoder": { "kind": "affine_squashed" }
        },
        "flow": { "step_size_max": 1.0 },
        "train": { "optimizer": "adam", "learning_rate": 0.01, "max_iters": 1500, "restarts": 3 },
        "output_dir": "out",
        "seed": 11
    })
}

#[test]
fn gen_writes_rows_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.json", &segment_config(40));
    let out = run("gen", &cfg);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let data = Dataset::read_csv("d", fs::File::open(dir.path().join("out/data.csv")).unwrap()).unwrap();
    assert_eq!(data.n(), 40);
    let train = Dataset::read_csv("t", fs::File::open(dir.path().join("out/train.csv")).unwrap()).unwrap();
    assert_eq!(train.n(), 20);
    let snapshot: Vec<Vec<u8>> = ["data.csv", "train.csv", "test.csv", "manifest.json"]
        .iter()
        .map(|f| fs::read(dir.path().join("out").join(f)).unwrap())
        .collect();
    assert_eq!(code(&run("gen", &cfg)), 0);
    for (f, before) in ["data.csv", "train.csv", "test.csv", "manifest.json"].iter().zip(&snapshot) {
        assert_eq!(&fs::read(dir.path().join("out").join(f)).unwrap(), before, "{f}");
    }
}

#[test]
fn missing_sample_size_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let mut cfg = segment_config(40);
    cfg["data"]["generator"].as_object_mut().unwrap().remove("n");
    let out = run("gen", &write_config(dir.path(), "run.json", &cfg));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("data.generator"), "{}", stderr(&out));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let mut cfg = segment_config(40);
    cfg["trian"] = json!({});
    assert_eq!(code(&run("gen", &write_config(dir.path(), "a.json", &cfg))), 2);
    let mut cfg = segment_config(40);
    cfg["train"]["learning_rat"] = json!(0.1);
    assert_eq!(code(&run("fit", &write_config(dir.path(), "b.json", &cfg))), 2);
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run("gen", &dir.path().join("absent.json"))), 3);
}

#[test]
fn eval_without_model_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.json", &segment_config(20));
    assert_eq!(code(&run("gen", &cfg)), 0);
    assert_eq!(code(&run("eval", &cfg)), 3);
}

#[test]
fn unbounded_flow_is_a_numeric_error() {
    let dir = TempDir::new().unwrap();
    let mut cfg = segment_config(20);
    cfg["model"]["interval"] = json!([0.0, 5000.0]);
    cfg["model"]["family"] = json!({ "kind": "affine", "dim": 2 });
    cfg["train"]["max_iters"] = json!(5);
    cfg["train"]["restarts"] = json!(1);
    let out = run("fit", &write_config(dir.path(), "run.json", &cfg));
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn fit_then_eval_generalizes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.json", &segment_config(120));
    for cmd in ["gen", "fit", "eval"] {
        let out = run(cmd, &cfg);
        assert_eq!(code(&out), 0, "{cmd}: {}", stderr(&out));
    }
    let eval = read_report(dir.path(), "eval_report.json");
    let test_risk = eval["test_risk"].as_f64().unwrap();
    assert!(test_risk <= 2e-2, "{test_risk}");
    assert!(dir.path().join("out/history.csv").exists());
    let model = fs::read(dir.path().join("out/model.json")).unwrap();
    assert_eq!(code(&run("fit", &cfg)), 0);
    assert_eq!(fs::read(dir.path().join("out/model.json")).unwrap(), model);
}

#[test]
fn bound_reports_closed_form_match() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "bounds": {
            "n": 100,
            "dudley": { "gamma_resolution": 12 },
            "class": {
                "m": 2,
                "d": 2,
                "interval": [0.0, 1.0],
                "comparison": { "kind": "exp_stable", "lambda": 1.0 },
                "l0": 1.5,
                "l": 0.0,
                "encoder_family": { "params": 4, "covering_constant": 2.0 },
                "field_family": { "params": 6, "covering_constant": 3.0 },
                "k": { "radius": 1.0 },
                "diameter": 200.0
            }
        },
        "output_dir": "out"
    });
    let path = write_config(dir.path(), "bound.json", &cfg);
    let out = run("bound", &path);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rep = read_report(dir.path(), "bound_report.json");
    let gap = rep["example_closed_form"]["closed_form_match"].as_f64().unwrap();
    assert!(gap <= 0.05, "{gap}");
    assert_eq!(rep["rademacher_source"], "entropy integral bound");
    let t2 = &rep["theorem2"];
    let want = 4.0 * rep["dudley_value"].as_f64().unwrap() + t2["deviation_term"].as_f64().unwrap();
    assert!((t2["certificate"].as_f64().unwrap() - want).abs() < 1e-12);
}

#[test]
fn verify_with_small_budget_passes_and_repeats() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "verify": {
            "lemmas": { "trials": 12, "c0_samples": 300, "step": 0.01 },
            "proposition": { "trials": 20, "k_samples": 100 }
        },
        "output_dir": "out",
        "seed": 5
    });
    let path = write_config(dir.path(), "verify.json", &cfg);
    let out = run("verify", &path);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = fs::read(dir.path().join("out/verification_report.json")).unwrap();
    let rep = read_report(dir.path(), "verification_report.json");
    assert_eq!(rep["violations"], 0);
    assert_eq!(rep["lemmas"].as_array().unwrap().len(), 6);
    assert_eq!(code(&run("verify", &path)), 0);
    assert_eq!(fs::read(dir.path().join("out/verification_report.json")).unwrap(), first);
}

#[test]
fn output_dir_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.json", &segment_config(10));
    let other = dir.path().join("elsewhere");
    let out = Command::new(BIN)
        .args(["gen", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&other)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(other.join("data.csv").exists());
    assert!(!dir.path().join("out").exists());
}
