use std::path::{Path, PathBuf};

use emgpose::data::write_atomic;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Everything needed to regenerate a CSV: written next to it as `<name>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub file: String,
    pub command: String,
    pub columns: Vec<String>,
    pub rows: usize,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub extra: Value,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Rows of one CSV file, flushed atomically together with its sidecar.
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path, command: &str, cfg: &ExperimentConfig, seeds: &[u64], extra: Value) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io { path: path.to_path_buf(), source: e.into_error() })?;
        let sidecar = Sidecar {
            file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            command: command.to_string(),
            columns: self.columns.clone(),
            rows: self.rows.len(),
            seeds: seeds.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            extra,
        };
        write_json(&sidecar_path(path), &sidecar)?;
        write_atomic(path, &bytes).map_err(CliError::from)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    text.push(b'\n');
    write_atomic(path, &text).map_err(CliError::from)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, hint: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::missing(path, hint),
        _ => CliError::Io { path: path.to_path_buf(), source: e },
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Core(e.into()))
}

/// Shortest round-trip formatting, so CSVs reproduce the f64 exactly.
pub fn num(v: f64) -> String {
    format!("{v}")
}
