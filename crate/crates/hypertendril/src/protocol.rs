// SPDX-License-Identifier: Apache-2.0

//! Line-delimited wire records exchanged with workers over stdin/stdout.

use std::collections::BTreeMap;
use std::path::PathBuf;

use hypertendril_core::ParamValue;
use serde::{Deserialize, Serialize};

/// Engine to worker. Sent once, as the first line on the worker's stdin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "start")]
pub struct StartRecord {
    pub trial_id: String,
    pub params: BTreeMap<String, ParamValue>,
    pub budget: u64,
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: PathBuf,
}

/// Worker to engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkerRecord {
    Metric {
        step: u64,
        values: BTreeMap<String, f64>,
    },
    Done {
        objective: f64,
        #[serde(default)]
        aux: BTreeMap<String, f64>,
    },
    Fail {
        reason: String,
    },
}

impl WorkerRecord {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, WorkerRecord::Metric { .. })
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("worker record serializes")
    }
}

impl StartRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("start record serializes")
    }
}

/// Parses one worker output line. Non-finite metric values or a
/// non-finite objective are rejected by JSON itself.
pub fn parse_worker_line(line: &str) -> Result<WorkerRecord, String> {
    serde_json::from_str(line.trim()).map_err(|e| format!("malformed worker record: {e}"))
}
