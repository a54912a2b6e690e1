use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emgpose::data::SyntheticConfig;
use emgpose::model::ModelConfig;
use emgpose::training::TrainConfig;
use serde_json::{json, Value};

fn tiny_config(train: Value) -> Value {
    let mut t = serde_json::to_value(TrainConfig { epochs_total: 2, warmup_epochs: 1, ..TrainConfig::tiny() }).unwrap();
    t.as_object_mut().unwrap().extend(train.as_object().unwrap().clone());
    json!({
        "name": "t",
        "data": SyntheticConfig { duration_s: 10.0, ..SyntheticConfig::tiny() },
        "model": ModelConfig::tiny(),
        "train": t,
        "seeds": [0],
        "betas": [0.1, 1.0],
        "out_dir": "out",
    })
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("exp.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn emgpose(stage: &str, config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emgpose")).arg(stage).arg("--config").arg(config).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn all_stages_run_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config(json!({})));
    for stage in ["gen-data", "train", "eval", "filter-sweep", "analyze", "report"] {
        let o = emgpose(stage, &cfg);
        assert_eq!(code(&o), 0, "{stage}: {}", stderr(&o));
    }
    let out = dir.path().join("out");
    for f in ["data/manifest.json", "eval/metrics.csv", "eval/metrics.json", "filter/frontier.csv", "report/summary.md", "report/summary.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(out.join("runs/velocity_tracking_s1/seed0/checkpoint.emgckpt").exists());

    // Two betas plus the unfiltered row, per model, condition and task.
    let frontier = std::fs::read_to_string(out.join("filter/frontier.csv")).unwrap();
    assert_eq!(frontier.lines().count() - 1, 2 * 4 * 3);

    // A second sweep with explicit flags replaces the first.
    let o = Command::new(env!("CARGO_BIN_EXE_emgpose"))
        .args(["filter-sweep", "--beta", "0.5", "--te", "0.001", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let frontier = std::fs::read_to_string(out.join("filter/frontier.csv")).unwrap();
    assert_eq!(frontier.lines().count() - 1, 2 * 4 * 2);
    let side: Value = serde_json::from_str(&std::fs::read_to_string(out.join("filter/frontier.json")).unwrap()).unwrap();
    assert_eq!(side["extra"]["betas"], json!([0.5]));
    assert_eq!(side["extra"]["te_s"], json!(0.001));
}

#[test]
fn missing_prerequisites_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config(json!({})));
    let o = emgpose("train", &cfg);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("manifest.json") && stderr(&o).contains("gen-data"));

    assert_eq!(code(&emgpose("gen-data", &cfg)), 0);
    let o = emgpose("eval", &cfg);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("checkpoint") && stderr(&o).contains("emgpose train"));
    assert_eq!(code(&emgpose("report", &cfg)), 3);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = tiny_config(json!({}));
    v["colour"] = json!("blue");
    assert_eq!(code(&emgpose("gen-data", &write_config(dir.path(), &v))), 2);

    let mut v = tiny_config(json!({}));
    v["model"]["emg_channels"] = json!(8);
    let o = emgpose("gen-data", &write_config(dir.path(), &v));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("channels"), "{}", stderr(&o));

    let o = emgpose("gen-data", &write_config(dir.path(), &tiny_config(json!({"w_reg": 0.5}))));
    assert_eq!(code(&o), 2);

    // Data generated under one config is rejected under another.
    let cfg = write_config(dir.path(), &tiny_config(json!({})));
    assert_eq!(code(&emgpose("gen-data", &cfg)), 0);
    let mut v = tiny_config(json!({}));
    v["data_seed"] = json!(99);
    let o = emgpose("train", &write_config(dir.path(), &v));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("rerun gen-data"), "{}", stderr(&o));

    let o = Command::new(env!("CARGO_BIN_EXE_emgpose")).args(["train", "--scale", "huge"]).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn divergence_exits_4_with_a_state_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config(json!({"lr_peak": 1e300, "lr_start": 1e300, "clip_norm": 1e300})));
    assert_eq!(code(&emgpose("gen-data", &cfg)), 0);
    let o = emgpose("train", &cfg);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let dump = std::fs::read_to_string(dir.path().join("out/runs/position_tracking_s1/seed0/divergence.json")).unwrap();
    assert!(dump.contains("parameter norms"));
}

#[test]
fn show_config_resolves_includes_and_overrides() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let o = Command::new(env!("CARGO_BIN_EXE_emgpose"))
        .args(["show-config", "--seed", "4", "--seed", "5", "--out", "elsewhere", "--config"])
        .arg(configs.join("collapse.json"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seeds"], json!([4, 5]));
    assert_eq!(v["out_dir"], json!("elsewhere"));
    assert_eq!(v["model"]["emg_channels"], json!(8));
    assert_eq!(v["model"]["lstm_hidden"], json!(ModelConfig::tiny().lstm_hidden));
    assert_eq!(v["train"]["batch_size"], json!(1));
}

#[test]
fn shipped_configs_match_presets() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let read = |p: &str| -> Value { serde_json::from_str(&std::fs::read_to_string(configs.join(p)).unwrap()).unwrap() };
    assert_eq!(read("data/tiny.json"), serde_json::to_value(SyntheticConfig::tiny()).unwrap());
    assert_eq!(read("data/desk.json"), serde_json::to_value(SyntheticConfig::desk()).unwrap());
    assert_eq!(read("model/tiny.json"), serde_json::to_value(ModelConfig::tiny()).unwrap());
    assert_eq!(read("model/desk.json"), serde_json::to_value(ModelConfig::desk()).unwrap());
    assert_eq!(read("model/full.json"), serde_json::to_value(ModelConfig::full()).unwrap());
    assert_eq!(read("train/desk.json"), serde_json::to_value(TrainConfig::desk()).unwrap());
    assert_eq!(read("train/full.json"), serde_json::to_value(TrainConfig::full()).unwrap());
    for exp in ["smoke.json", "collapse.json", "desk.json", "full.json"] {
        let o = Command::new(env!("CARGO_BIN_EXE_emgpose")).arg("show-config").arg("--config").arg(configs.join(exp)).output().unwrap();
        assert_eq!(code(&o), 0, "{exp}: {}", stderr(&o));
    }
}
