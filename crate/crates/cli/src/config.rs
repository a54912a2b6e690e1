//! Experiment configs: JSON with sub-configs given inline, as a path to
//! another JSON file, or as `{"include": path, ...overrides}`.

use std::path::{Path, PathBuf};

use emgpose::data::{SplitConfig, SyntheticConfig};
use emgpose::model::{ModelConfig, OutputParam};
use emgpose::training::{TaskMode, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Default smoothing grid, in 1/(deg s).
pub const DEFAULT_BETAS: [f64; 7] = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0];
const MAX_INCLUDE_DEPTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn data(self) -> SyntheticConfig {
        match self {
            Scale::Desk => SyntheticConfig::desk(),
            Scale::Full => SyntheticConfig { channels: 16, joints: 20, ..SyntheticConfig::desk() },
        }
    }

    pub fn model(self) -> ModelConfig {
        match self {
            Scale::Desk => ModelConfig::desk(),
            Scale::Full => ModelConfig::full(),
        }
    }

    pub fn train(self) -> TrainConfig {
        match self {
            Scale::Desk => TrainConfig::desk(),
            Scale::Full => TrainConfig::full(),
        }
    }
}

/// Which models to train: the product of the three lists, once per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunGrid {
    pub output_params: Vec<OutputParam>,
    pub task_modes: Vec<TaskMode>,
    pub output_scalars: Vec<f64>,
}

impl Default for RunGrid {
    fn default() -> Self {
        Self {
            output_params: vec![OutputParam::Position, OutputParam::Velocity],
            task_modes: vec![TaskMode::SingleTracking],
            output_scalars: vec![1.0],
        }
    }
}

/// One trained model family (seeds aside).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelVariant {
    pub output_param: OutputParam,
    pub task_mode: TaskMode,
    pub output_scalar: f64,
}

impl ModelVariant {
    pub fn id(&self) -> String {
        let param = match self.output_param {
            OutputParam::Position => "position",
            OutputParam::Velocity => "velocity",
        };
        let mode = match self.task_mode {
            TaskMode::SingleTracking => "tracking",
            TaskMode::SingleRegression => "regression",
            TaskMode::Multitask => "multitask",
        };
        format!("{param}_{mode}_s{}", self.output_scalar)
    }

    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            output_param: self.output_param,
            output_scalar: self.output_scalar,
            regression: base.regression || self.task_mode != TaskMode::SingleTracking,
            ..base.clone()
        }
    }
}

/// Fully resolved experiment; this is what sidecars record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: SyntheticConfig,
    pub data_seed: u64,
    /// Held-out users and stages; defaults to the last of each.
    pub split: Option<SplitConfig>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub grid: RunGrid,
    pub seeds: Vec<u64>,
    pub betas: Vec<f64>,
    /// Filter sample period; defaults to the EMG sample period.
    pub filter_te_s: Option<f64>,
    pub out_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    scale: Option<Scale>,
    data: Option<Value>,
    data_seed: Option<u64>,
    split: Option<SplitConfig>,
    model: Option<Value>,
    train: Option<Value>,
    grid: Option<RunGrid>,
    seeds: Option<Vec<u64>>,
    betas: Option<Vec<f64>>,
    filter_te_s: Option<f64>,
    out_dir: Option<PathBuf>,
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Config(format!("config file {} not found", path.display())),
        _ => CliError::Io { path: path.to_path_buf(), source: e },
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Expands `"path"` and `{"include": "path", ...}` into a plain object,
/// resolving paths against `base_dir`. Overrides are shallow.
fn resolve_include(value: Value, base_dir: &Path, depth: usize) -> CliResult<Value> {
    if depth > MAX_INCLUDE_DEPTH {
        return Err(CliError::Config("includes nested too deeply (cycle?)".into()));
    }
    let (path, overrides) = match value {
        Value::String(p) => (PathBuf::from(p), Map::new()),
        Value::Object(mut m) => match m.remove("include") {
            Some(Value::String(p)) => (PathBuf::from(p), m),
            Some(other) => return Err(CliError::Config(format!("include must be a path string, got {other}"))),
            None => return Ok(Value::Object(m)),
        },
        other => return Err(CliError::Config(format!("expected an object or a path, got {other}"))),
    };
    let path = base_dir.join(path);
    let included = read_json(&path)?;
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut merged = match resolve_include(included, &dir, depth + 1)? {
        Value::Object(m) => m,
        _ => unreachable!("resolve_include returns objects"),
    };
    merged.extend(overrides);
    Ok(Value::Object(merged))
}

fn sub_config<T: serde::de::DeserializeOwned>(value: Option<Value>, base_dir: &Path, what: &str, default: T) -> CliResult<T> {
    match value {
        None => Ok(default),
        Some(v) => {
            let v = resolve_include(v, base_dir, 0)?;
            serde_json::from_value(v).map_err(|e| CliError::Config(format!("{what} config: {e}")))
        }
    }
}

impl ExperimentConfig {
    /// Built-in experiment at a given scale.
    pub fn preset(scale: Scale) -> Self {
        Self {
            name: format!("{scale:?}").to_lowercase(),
            data: scale.data(),
            data_seed: 1,
            split: None,
            model: scale.model(),
            train: scale.train(),
            grid: RunGrid::default(),
            seeds: vec![0],
            betas: DEFAULT_BETAS.to_vec(),
            filter_te_s: None,
            out_dir: PathBuf::from("runs").join(format!("{scale:?}").to_lowercase()),
        }
    }

    /// Loads `path`; sub-configs it omits come from the scale preset
    /// (`scale` overrides the file's own `scale` key).
    pub fn load(path: &Path, scale: Option<Scale>) -> CliResult<Self> {
        let raw: RawConfig = serde_json::from_value(read_json(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let scale = scale.or(raw.scale).unwrap_or(Scale::Desk);
        let preset = Self::preset(scale);
        let name = raw.name.unwrap_or_else(|| path.file_stem().map_or(preset.name.clone(), |s| s.to_string_lossy().into_owned()));
        let cfg = Self {
            data: sub_config(raw.data, &base_dir, "data", preset.data)?,
            model: sub_config(raw.model, &base_dir, "model", preset.model)?,
            train: sub_config(raw.train, &base_dir, "train", preset.train)?,
            data_seed: raw.data_seed.unwrap_or(preset.data_seed),
            split: raw.split,
            grid: raw.grid.unwrap_or(preset.grid),
            seeds: raw.seeds.unwrap_or(preset.seeds),
            betas: raw.betas.unwrap_or(preset.betas),
            filter_te_s: raw.filter_te_s,
            out_dir: raw.out_dir.map_or_else(|| PathBuf::from("runs").join(&name), |p| base_dir.join(p)),
            name,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn variants(&self) -> Vec<ModelVariant> {
        let mut out = Vec::new();
        for &output_param in &self.grid.output_params {
            for &task_mode in &self.grid.task_modes {
                for &output_scalar in &self.grid.output_scalars {
                    out.push(ModelVariant { output_param, task_mode, output_scalar });
                }
            }
        }
        out
    }

    pub fn filter_te(&self) -> f64 {
        self.filter_te_s.unwrap_or(1.0 / self.data.sample_rate_hz)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.data.validate()?;
        self.train.validate()?;
        let bad = |m: String| Err(CliError::Config(m));
        if self.grid.output_params.is_empty() || self.grid.task_modes.is_empty() || self.grid.output_scalars.is_empty() {
            return bad("run grid lists must be non-empty".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.betas.iter().any(|b| !(*b >= 0.0)) || self.betas.is_empty() {
            return bad("betas must be a non-empty list of values >= 0".into());
        }
        if self.filter_te_s.is_some_and(|t| !(t > 0.0)) {
            return bad("filter_te_s must be positive".into());
        }
        let m = &self.model;
        if m.emg_channels != self.data.channels || m.joints != self.data.joints {
            return bad(format!(
                "model expects {} channels and {} joints, data has {} and {}",
                m.emg_channels, m.joints, self.data.channels, self.data.joints
            ));
        }
        if m.emg_rate_hz != self.data.sample_rate_hz {
            return bad(format!("model EMG rate {} Hz != data rate {} Hz", m.emg_rate_hz, self.data.sample_rate_hz));
        }
        for v in self.variants() {
            v.model_config(m).validate()?;
        }
        let samples = (self.train.window_s * self.data.sample_rate_hz).round() as usize;
        m.feature_frames(samples)?;
        if self.train.window_s > self.data.duration_s {
            return bad(format!("window {} s is longer than the {} s sessions", self.train.window_s, self.data.duration_s));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, v: Value) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
        p
    }

    #[test]
    fn includes_resolve_relative_with_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("parts")).unwrap();
        let tiny = serde_json::to_value(ModelConfig::tiny()).unwrap();
        write(&dir.path().join("parts"), "tiny.json", tiny);
        write(&dir.path().join("parts"), "tiny8.json", serde_json::json!({"include": "tiny.json", "emg_channels": 8, "joints": 8}));
        let p = write(
            dir.path(),
            "exp.json",
            serde_json::json!({"model": {"include": "parts/tiny8.json", "output_scalar": 0.1}, "seeds": [3, 4]}),
        );
        let cfg = ExperimentConfig::load(&p, None).unwrap();
        assert_eq!(cfg.model.emg_channels, 8);
        assert_eq!(cfg.model.output_scalar, 0.1);
        assert_eq!(cfg.model.lstm_hidden, ModelConfig::tiny().lstm_hidden);
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.name, "exp");
        assert_eq!(cfg.out_dir, PathBuf::from("runs/exp"));
    }

    #[test]
    fn mismatched_shapes_and_unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.json", serde_json::json!({"model": serde_json::to_value(ModelConfig::tiny()).unwrap()}));
        assert!(matches!(ExperimentConfig::load(&p, None), Err(CliError::Config(_))));
        let p = write(dir.path(), "b.json", serde_json::json!({"modle": {}}));
        assert!(matches!(ExperimentConfig::load(&p, None), Err(CliError::Config(_))));
        let p = write(dir.path(), "c.json", serde_json::json!({"train": "missing.json"}));
        assert!(matches!(ExperimentConfig::load(&p, None), Err(CliError::Config(_))));
        let p = write(dir.path(), "d.json", serde_json::json!({"train": {"include": "d.json"}}));
        assert!(matches!(ExperimentConfig::load(&p, None), Err(CliError::Config(_))));
    }

    #[test]
    fn variant_ids_are_stable() {
        let v = ModelVariant { output_param: OutputParam::Velocity, task_mode: TaskMode::Multitask, output_scalar: 0.01 };
        assert_eq!(v.id(), "velocity_multitask_s0.01");
        assert!(v.model_config(&ModelConfig::tiny()).regression);
    }
}
