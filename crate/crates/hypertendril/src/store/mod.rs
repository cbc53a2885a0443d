// SPDX-License-Identifier: Apache-2.0

//! On-disk system of record.
//!
//! ```text
//! <root>/<study>/study.json
//! <root>/<study>/<proc>.lock
//! <root>/<study>/<proc>/config.json
//! <root>/<study>/<proc>/events.jsonl
//! <root>/<study>/<proc>/trials.jsonl
//! <root>/<study>/<proc>/metrics/<trial>.jsonl
//! <root>/<study>/<proc>/checkpoints/
//! ```

pub mod lock;
pub mod log;
pub mod state;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use hypertendril_core::reservoir::Reservoir;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ProcessConfig};
use crate::SCHEMA_VERSION;
pub use log::{read_log, Entry, LogRecord, ProcessStatus, ProcessWriter, StoredEvent, TrialResult};
pub use state::{trial_key, ProcessState, ReplayError, TrialRecord, TrialStatus};

pub const STORE_ENV: &str = "HYPERTENDRIL_STORE";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record in {path} at line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("inconsistent event log for `{process_id}`: {source}")]
    Replay {
        process_id: String,
        #[source]
        source: ReplayError,
    },
    #[error("unknown study `{0}`")]
    UnknownStudy(String),
    #[error("unknown process `{0}`")]
    UnknownProcess(String),
    #[error("unknown trial `{0}`")]
    UnknownTrial(String),
    #[error("process `{0}` is finished")]
    ProcessFinished(String),
    #[error("process `{process_id}` is locked by pid {pid}")]
    Locked { process_id: String, pid: u32 },
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
}

impl StoreError {
    /// Whether the error means files on disk are damaged.
    pub fn is_corruption(&self) -> bool {
        matches!(self, StoreError::Corrupt { .. } | StoreError::Replay { .. })
    }
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_micros() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub schema_version: u32,
    pub id: String,
    pub name: String,
    pub created_us: u64,
    pub process_ids: Vec<String>,
}

/// One reservoir-sampled metric stream as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub schema_version: u32,
    pub trial: String,
    pub metric: String,
    pub capacity: usize,
    pub seen: u64,
    pub samples: Vec<(u64, f64)>,
}

static CREATE_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// Splits `s3-p2` into (`s3`, 2).
pub fn parse_process_id(id: &str) -> Option<(&str, u64)> {
    let (study, n) = id.rsplit_once("-p")?;
    let n = n.parse().ok()?;
    parse_study_id(study)?;
    Some((study, n))
}

fn parse_study_id(id: &str) -> Option<u64> {
    id.strip_prefix('s')?.parse().ok()
}

/// Splits `s3-p2-t17` into (`s3-p2`, 17).
pub fn parse_trial_key(key: &str) -> Option<(&str, u64)> {
    let (proc_id, n) = key.rsplit_once("-t")?;
    let n = n.parse().ok()?;
    parse_process_id(proc_id)?;
    Some((proc_id, n))
}

/// Writes via a temporary file and rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Store, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(Store { root })
    }

    /// Opens the store named by `HYPERTENDRIL_STORE`, defaulting to
    /// `./hypertendril-store`.
    pub fn from_env() -> Result<Store, StoreError> {
        Store::open(std::env::var_os(STORE_ENV).map_or_else(|| PathBuf::from("hypertendril-store"), PathBuf::from))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn study_dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        parse_study_id(id).ok_or_else(|| StoreError::UnknownStudy(id.to_string()))?;
        let dir = self.root.join(id);
        if dir.join("study.json").is_file() {
            Ok(dir)
        } else {
            Err(StoreError::UnknownStudy(id.to_string()))
        }
    }

    pub fn process_dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        let (study, _) = parse_process_id(id).ok_or_else(|| StoreError::UnknownProcess(id.to_string()))?;
        let dir = self.root.join(study).join(id);
        if dir.join("config.json").is_file() {
            Ok(dir)
        } else {
            Err(StoreError::UnknownProcess(id.to_string()))
        }
    }

    pub fn lock_path(&self, process_id: &str) -> Result<PathBuf, StoreError> {
        let (study, _) =
            parse_process_id(process_id).ok_or_else(|| StoreError::UnknownProcess(process_id.to_string()))?;
        Ok(self.root.join(study).join(format!("{process_id}.lock")))
    }

    pub fn create_study(&self, name: &str) -> Result<Study, StoreError> {
        let _g = CREATE_LOCK.lock().expect("create lock poisoned");
        let mut n = self.list_studies()?.iter().filter_map(|s| parse_study_id(&s.id)).max().unwrap_or(0) + 1;
        loop {
            let id = format!("s{n}");
            let dir = self.root.join(&id);
            match std::fs::create_dir(&dir) {
                Ok(()) => {
                    let study = Study {
                        schema_version: SCHEMA_VERSION,
                        id,
                        name: name.to_string(),
                        created_us: now_us(),
                        process_ids: Vec::new(),
                    };
                    self.write_study(&study)?;
                    return Ok(study);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(io_err(&dir, e)),
            }
        }
    }

    fn write_study(&self, study: &Study) -> Result<(), StoreError> {
        let path = self.root.join(&study.id).join("study.json");
        write_atomic(&path, &serde_json::to_vec_pretty(study).expect("study serializes"))
    }

    pub fn list_studies(&self) -> Result<Vec<Study>, StoreError> {
        let mut out = Vec::new();
        let entries = std::fs::read_dir(&self.root).map_err(|e| io_err(&self.root, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| io_err(&self.root, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if parse_study_id(&name).is_some() && entry.path().join("study.json").is_file() {
                out.push(self.study(&name)?);
            }
        }
        out.sort_by_key(|s| parse_study_id(&s.id));
        Ok(out)
    }

    pub fn study(&self, id: &str) -> Result<Study, StoreError> {
        read_json(&self.study_dir(id)?.join("study.json"))
    }

    /// Registers a new pending process. The config is validated and frozen.
    pub fn create_process(&self, study_id: &str, config: &ProcessConfig) -> Result<String, StoreError> {
        config.validate()?;
        let _g = CREATE_LOCK.lock().expect("create lock poisoned");
        let mut study = self.study(study_id)?;
        let dir = self.study_dir(study_id)?;
        let mut n = study
            .process_ids
            .iter()
            .filter_map(|p| parse_process_id(p).map(|(_, n)| n))
            .max()
            .unwrap_or(0)
            + 1;
        let id = loop {
            let id = format!("{study_id}-p{n}");
            match std::fs::create_dir(dir.join(&id)) {
                Ok(()) => break id,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(io_err(&dir, e)),
            }
        };
        let pdir = dir.join(&id);
        std::fs::create_dir_all(pdir.join("metrics")).map_err(|e| io_err(&pdir, e))?;
        write_atomic(&pdir.join("config.json"), config.to_pretty_json().as_bytes())?;
        study.process_ids.push(id.clone());
        self.write_study(&study)?;
        Ok(id)
    }

    pub fn process_config(&self, process_id: &str) -> Result<ProcessConfig, StoreError> {
        let path = self.process_dir(process_id)?.join("config.json");
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        ProcessConfig::parse(&text).map_err(|e| StoreError::Corrupt {
            path,
            line: e.line.unwrap_or(0),
            message: e.to_string(),
        })
    }

    pub fn events_path(&self, process_id: &str) -> Result<PathBuf, StoreError> {
        Ok(self.process_dir(process_id)?.join("events.jsonl"))
    }

    pub fn snapshot_path(&self, process_id: &str) -> Result<PathBuf, StoreError> {
        Ok(self.process_dir(process_id)?.join("trials.jsonl"))
    }

    pub fn checkpoint_dir(&self, process_id: &str, config: &ProcessConfig) -> Result<PathBuf, StoreError> {
        let dir = match &config.worker.checkpoint_dir {
            Some(d) => d.join(process_id),
            None => self.process_dir(process_id)?.join("checkpoints"),
        };
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        std::path::absolute(&dir).map_err(|e| io_err(&dir, e))
    }

    /// Reads the committed log, ignoring a torn tail.
    pub fn read_log(&self, process_id: &str) -> Result<Vec<LogRecord>, StoreError> {
        Ok(read_log(&self.events_path(process_id)?)?.records)
    }

    /// Rebuilds process state from the log.
    pub fn load_state(&self, process_id: &str) -> Result<ProcessState, StoreError> {
        let records = self.read_log(process_id)?;
        ProcessState::replay(process_id, &records).map_err(|source| StoreError::Replay {
            process_id: process_id.to_string(),
            source,
        })
    }

    pub fn status(&self, process_id: &str) -> Result<ProcessStatus, StoreError> {
        Ok(self.load_state(process_id)?.status)
    }

    /// Takes the process lock and opens the log for appending.
    pub fn open_writer(&self, process_id: &str) -> Result<(ProcessWriter, Vec<LogRecord>), StoreError> {
        let path = self.events_path(process_id)?;
        let guard = lock::LockGuard::acquire(&self.lock_path(process_id)?, process_id)?;
        ProcessWriter::open(process_id, path, guard)
    }

    pub fn write_snapshot(&self, state: &ProcessState) -> Result<(), StoreError> {
        write_atomic(&self.snapshot_path(&state.process_id)?, state.snapshot_text().as_bytes())
    }

    pub fn read_snapshot(&self, process_id: &str) -> Result<Option<String>, StoreError> {
        let path = self.snapshot_path(process_id)?;
        match std::fs::read_to_string(&path) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path, e)),
        }
    }

    pub fn write_metrics(
        &self,
        process_id: &str,
        trial: &str,
        reservoirs: &BTreeMap<String, Reservoir>,
    ) -> Result<(), StoreError> {
        let dir = self.process_dir(process_id)?.join("metrics");
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let mut text = String::new();
        for (metric, r) in reservoirs {
            let rec = MetricRecord {
                schema_version: SCHEMA_VERSION,
                trial: trial.to_string(),
                metric: metric.clone(),
                capacity: r.capacity(),
                seen: r.seen(),
                samples: r.view(),
            };
            text.push_str(&serde_json::to_string(&rec).expect("metric record serializes"));
            text.push('\n');
        }
        write_atomic(&dir.join(format!("{trial}.jsonl")), text.as_bytes())
    }

    /// Reads every metric stream of a trial (by store key).
    pub fn read_metrics(&self, trial: &str) -> Result<Vec<MetricRecord>, StoreError> {
        let (proc_id, n) = parse_trial_key(trial).ok_or_else(|| StoreError::UnknownTrial(trial.to_string()))?;
        let dir = self
            .process_dir(proc_id)
            .map_err(|_| StoreError::UnknownTrial(trial.to_string()))?;
        let path = dir.join("metrics").join(format!("{trial}.jsonl"));
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let state = self.load_state(proc_id)?;
                return if state.trials.contains_key(&hypertendril_core::TrialId(n)) {
                    Ok(Vec::new())
                } else {
                    Err(StoreError::UnknownTrial(trial.to_string()))
                };
            }
            Err(e) => return Err(io_err(&path, e)),
        };
        text.lines()
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }
}
