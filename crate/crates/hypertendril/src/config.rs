// SPDX-License-Identifier: Apache-2.0

//! Process configuration: the file operators write and the record stored as
//! `config.json` for every process.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use hypertendril_core::pareto::Direction;
use hypertendril_core::{OptimizerConfig, ParamSpec, ParamValue, SearchSpace};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::SCHEMA_VERSION;

pub const DEFAULT_TIMEOUT_PER_UNIT_S: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub metric: String,
    #[serde(default)]
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpec {
    /// Program followed by arguments. `{trial_id}` is substituted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
    /// Name of an in-process synthetic objective, used instead of `command`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub working_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env: BTreeMap<String, String>,
    #[serde(default = "default_timeout")]
    pub timeout_per_unit_s: f64,
    /// Defaults to `checkpoints/` inside the process directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_PER_UNIT_S
}

impl WorkerSpec {
    pub fn builtin(name: &str) -> Self {
        WorkerSpec {
            command: Vec::new(),
            builtin: Some(name.to_string()),
            working_dir: None,
            env: BTreeMap::new(),
            timeout_per_unit_s: DEFAULT_TIMEOUT_PER_UNIT_S,
            checkpoint_dir: None,
        }
    }

    pub fn command<S: AsRef<str>>(argv: &[S]) -> Self {
        WorkerSpec {
            command: argv.iter().map(|s| s.as_ref().to_string()).collect(),
            builtin: None,
            ..WorkerSpec::builtin("")
        }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_parallelism() -> usize {
    1
}

fn default_reservoir() -> usize {
    hypertendril_core::reservoir::DEFAULT_CAPACITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub objective: ObjectiveSpec,
    pub space: SearchSpace,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fixed: BTreeMap<String, ParamValue>,
    pub algorithm: OptimizerConfig,
    pub budget: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
    pub worker: WorkerSpec,
    #[serde(default = "default_reservoir")]
    pub reservoir_capacity: usize,
}

/// A validation failure anchored to a field path and, when it can be found,
/// a 1-based line in the source text.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.path, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

impl ConfigError {
    fn at(path: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError {
            path: path.into(),
            line: None,
            message: message.to_string(),
        }
    }
}

impl ProcessConfig {
    /// Parses and validates config text.
    pub fn parse(text: &str) -> Result<ProcessConfig, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError {
            path: "<document>".into(),
            line: Some(e.line()),
            message: e.to_string(),
        })?;
        Self::from_value(&value).map_err(|mut e| {
            e.line = e.line.or_else(|| locate(text, &e.path, &value));
            e
        })
    }

    /// Validates a parsed document field by field so errors name the path.
    pub fn from_value(value: &Value) -> Result<ProcessConfig, ConfigError> {
        let obj = value
            .as_object()
            .ok_or_else(|| ConfigError::at("<document>", "expected an object"))?;
        if let Some(v) = obj.get("schema_version") {
            if v.as_u64() != Some(SCHEMA_VERSION as u64) {
                return Err(ConfigError::at(
                    "schema_version",
                    format!("unsupported schema version {v} (expected {SCHEMA_VERSION})"),
                ));
            }
        }
        let params = obj
            .get("space")
            .and_then(|s| s.get("params"))
            .and_then(Value::as_array)
            .ok_or_else(|| ConfigError::at("space.params", "missing list of parameters"))?;
        let mut specs = Vec::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            let spec: ParamSpec = serde_json::from_value(p.clone())
                .map_err(|e| ConfigError::at(format!("space.params[{i}]"), e))?;
            if let Some(j) = specs.iter().position(|s: &ParamSpec| s.name() == spec.name()) {
                return Err(ConfigError::at(
                    format!("space.params[{i}]"),
                    format!("duplicate parameter name `{}` (also space.params[{j}])", spec.name()),
                ));
            }
            specs.push(spec);
        }
        SearchSpace::new(specs).map_err(|e| ConfigError::at("space.params", e))?;

        for key in ["objective", "algorithm", "worker", "fixed"] {
            if let Some(v) = obj.get(key) {
                check_field(key, v)?;
            }
        }
        let cfg: ProcessConfig =
            serde_json::from_value(value.clone()).map_err(|e| ConfigError::at("<document>", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Invariants that span fields.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.objective.metric.trim().is_empty() {
            return Err(ConfigError::at("objective.metric", "must not be empty"));
        }
        self.algorithm
            .validate()
            .map_err(|e| ConfigError::at("algorithm", e))?;
        if self.budget < 1 {
            return Err(ConfigError::at("budget", "must be >= 1"));
        }
        if self.parallelism < 1 {
            return Err(ConfigError::at("parallelism", "must be >= 1"));
        }
        if self.reservoir_capacity < 1 {
            return Err(ConfigError::at("reservoir_capacity", "must be >= 1"));
        }
        for name in self.fixed.keys() {
            if self.space.get(name).is_some() {
                return Err(ConfigError::at(
                    format!("fixed.{name}"),
                    "a fixed constant cannot also be a searched parameter",
                ));
            }
        }
        match (&self.worker.builtin, self.worker.command.is_empty()) {
            (Some(_), false) => {
                return Err(ConfigError::at("worker", "set either `command` or `builtin`, not both"))
            }
            (None, true) => return Err(ConfigError::at("worker.command", "must not be empty")),
            (Some(b), true) if !crate::worker::is_builtin(b) => {
                return Err(ConfigError::at("worker.builtin", format!("unknown builtin `{b}`")))
            }
            _ => {}
        }
        if !(self.worker.timeout_per_unit_s > 0.0) {
            return Err(ConfigError::at("worker.timeout_per_unit_s", "must be > 0"));
        }
        if let hypertendril_core::OptimizerConfig::Pbt(p) = &self.algorithm {
            if let Err(e) = hypertendril_core::optimizer::Pbt::new(p.clone(), self.space.clone(), self.budget, 0) {
                return Err(ConfigError::at("algorithm.perturb", e));
            }
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn check_field(key: &str, v: &Value) -> Result<(), ConfigError> {
    let res = match key {
        "objective" => serde_json::from_value::<ObjectiveSpec>(v.clone()).map(drop),
        "algorithm" => serde_json::from_value::<OptimizerConfig>(v.clone()).map(drop),
        "worker" => serde_json::from_value::<WorkerSpec>(v.clone()).map(drop),
        _ => serde_json::from_value::<BTreeMap<String, ParamValue>>(v.clone()).map(drop),
    };
    res.map_err(|e| ConfigError::at(key, e))
}

/// Best-effort line lookup: finds the key (or the n-th array element's
/// `name` entry) in the raw text.
fn locate(text: &str, path: &str, value: &Value) -> Option<usize> {
    let line_of = |offset: usize| text[..offset].matches('\n').count() + 1;
    if let Some(rest) = path.strip_prefix("space.params[") {
        let i: usize = rest.split(']').next()?.parse().ok()?;
        let name = value["space"]["params"].get(i)?.get("name")?.as_str()?;
        let needle = serde_json::to_string(name).ok()?;
        let mut from = 0;
        while let Some(pos) = text[from..].find(&needle) {
            let at = from + pos;
            let before = text[..at].trim_end();
            if before.ends_with(':') && before[..before.len() - 1].trim_end().ends_with("\"name\"") {
                return Some(line_of(at));
            }
            from = at + needle.len();
        }
        return None;
    }
    let key = path.split(['.', '[']).next_back()?;
    let needle = format!("\"{key}\"");
    text.find(&needle).map(line_of)
}

/// Annotated example written by `init`. Keys starting with `//` are ignored
/// comments.
pub const EXAMPLE_CONFIG: &str = r#"{
  "//": "HyperTendril process configuration. Keys named // are comments.",
  "schema_version": 1,
  "objective": { "metric": "objective", "direction": "minimize" },
  "// space": "kind is continuous, integer or categorical; scale is linear or log",
  "space": {
    "params": [
      { "name": "x1", "kind": "continuous", "low": 0.0, "high": 1.0, "scale": "linear" },
      { "name": "x2", "kind": "continuous", "low": 0.0, "high": 1.0, "scale": "linear" }
    ]
  },
  "// fixed": "constants passed to every trial unchanged",
  "fixed": {},
  "// algorithm": "type is random, tpe, hyperband, bohb or pbt",
  "algorithm": { "type": "pbt", "population": 8, "interval": 1, "survivor_rate": 0.5, "generations": 10 },
  "budget": 80,
  "parallelism": 4,
  "seed": 7,
  "// worker": "either command (argv list) or builtin (quad_bowl, quadratic, branin, hartmann3, product_surface, noisy_additive)",
  "worker": { "builtin": "quad_bowl", "timeout_per_unit_s": 300 }
}
"#;

/// Strips top-level and nested keys that start with `//`.
pub fn strip_comments(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.retain(|k, _| !k.starts_with("//"));
            map.values_mut().for_each(strip_comments);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_comments),
        _ => {}
    }
}

/// Parses a config file as written by operators (comments allowed).
pub fn load_config_text(text: &str) -> Result<ProcessConfig, ConfigError> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| ConfigError {
        path: "<document>".into(),
        line: Some(e.line()),
        message: e.to_string(),
    })?;
    strip_comments(&mut value);
    ProcessConfig::from_value(&value).map_err(|mut e| {
        e.line = e.line.or_else(|| locate(text, &e.path, &value));
        e
    })
}
