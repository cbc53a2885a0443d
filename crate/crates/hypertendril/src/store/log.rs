// SPDX-License-Identifier: Apache-2.0

//! The append-only per-process event log (`events.jsonl`).

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use hypertendril_core::optimizer::Status;
use hypertendril_core::{ExplorationEvent, Suggestion, TrialId};
use serde::{Deserialize, Serialize};

use super::lock::LockGuard;
use super::{io_err, now_us, StoreError};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessStatus {
    Pending,
    Running,
    Stopped,
    Finished,
}

/// An exploration event with its per-process sequence number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub event: ExplorationEvent,
}

/// Outcome of one trial run, objective in the configured metric's units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: TrialId,
    pub status: Status,
    pub objective: Option<f64>,
    pub budget_consumed: u64,
    #[serde(default)]
    pub aux: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
    pub started_us: u64,
    pub finished_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Entry {
    Status {
        status: ProcessStatus,
    },
    Asked {
        suggestions: Vec<Suggestion>,
        events: Vec<StoredEvent>,
    },
    Started {
        trial_id: TrialId,
    },
    Told {
        result: TrialResult,
        events: Vec<StoredEvent>,
    },
}

impl Entry {
    pub fn asked(suggestions: Vec<Suggestion>, events: Vec<ExplorationEvent>) -> Entry {
        Entry::Asked {
            suggestions,
            events: unnumbered(events),
        }
    }

    pub fn told(result: TrialResult, events: Vec<ExplorationEvent>) -> Entry {
        Entry::Told {
            result,
            events: unnumbered(events),
        }
    }

    fn events_mut(&mut self) -> Option<&mut Vec<StoredEvent>> {
        match self {
            Entry::Asked { events, .. } | Entry::Told { events, .. } => Some(events),
            _ => None,
        }
    }
}

fn unnumbered(events: Vec<ExplorationEvent>) -> Vec<StoredEvent> {
    events.into_iter().map(|event| StoredEvent { seq: 0, event }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub schema_version: u32,
    pub seq: u64,
    pub at_us: u64,
    #[serde(flatten)]
    pub entry: Entry,
}

/// Contents of an event log.
#[derive(Debug, Clone, Default)]
pub struct LogContents {
    pub records: Vec<LogRecord>,
    /// Byte length of the intact prefix.
    pub valid_len: u64,
    /// A partial final line was found and ignored.
    pub torn_tail: bool,
}

/// Reads a log, ignoring a torn final line. Any other malformed line is
/// corruption.
pub fn read_log(path: &Path) -> Result<LogContents, StoreError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(LogContents::default()),
        Err(e) => return Err(io_err(path, e)),
    };
    let mut out = LogContents::default();
    let mut start = 0usize;
    let mut line_no = 0usize;
    while start < bytes.len() {
        line_no += 1;
        let Some(rel) = bytes[start..].iter().position(|&b| b == b'\n') else {
            out.torn_tail = true;
            break;
        };
        let line = &bytes[start..start + rel];
        let record: LogRecord = serde_json::from_slice(line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if record.schema_version != SCHEMA_VERSION {
            return Err(StoreError::Corrupt {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("unsupported schema version {}", record.schema_version),
            });
        }
        out.records.push(record);
        start += rel + 1;
        out.valid_len = start as u64;
    }
    Ok(out)
}

struct WriterInner {
    file: File,
    next_seq: u64,
    next_event_seq: u64,
    finished: bool,
}

/// Exclusive appender for one process log. Holds the process lock file for
/// its lifetime. Appends are serialized internally, so the writer may be
/// shared between threads.
pub struct ProcessWriter {
    process_id: String,
    path: PathBuf,
    inner: Mutex<WriterInner>,
    _lock: LockGuard,
}

impl ProcessWriter {
    /// Opens the log for appending after truncating any torn tail.
    pub(crate) fn open(
        process_id: &str,
        path: PathBuf,
        lock: LockGuard,
    ) -> Result<(ProcessWriter, Vec<LogRecord>), StoreError> {
        let contents = read_log(&path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        if contents.torn_tail {
            file.set_len(contents.valid_len).map_err(|e| io_err(&path, e))?;
        }
        let next_seq = contents.records.last().map_or(0, |r| r.seq + 1);
        let next_event_seq = contents
            .records
            .iter()
            .filter_map(|r| match &r.entry {
                Entry::Asked { events, .. } | Entry::Told { events, .. } => events.last(),
                _ => None,
            })
            .last()
            .map_or(0, |e| e.seq + 1);
        let finished = contents.records.iter().any(|r| {
            matches!(
                r.entry,
                Entry::Status {
                    status: ProcessStatus::Finished
                }
            )
        });
        let writer = ProcessWriter {
            process_id: process_id.to_string(),
            path,
            inner: Mutex::new(WriterInner {
                file,
                next_seq,
                next_event_seq,
                finished,
            }),
            _lock: lock,
        };
        Ok((writer, contents.records))
    }

    pub fn process_id(&self) -> &str {
        &self.process_id
    }

    /// Appends one record, assigning its sequence numbers atomically.
    pub fn append(&self, entry: Entry) -> Result<LogRecord, StoreError> {
        self.write(entry, false)
    }

    /// Writes the first half of a record without a newline, as a crash in
    /// the middle of a write would.
    pub fn append_torn(&self, entry: Entry) -> Result<(), StoreError> {
        self.write(entry, true).map(drop)
    }

    fn write(&self, mut entry: Entry, torn: bool) -> Result<LogRecord, StoreError> {
        let mut inner = self.inner.lock().expect("writer lock poisoned");
        if inner.finished {
            return Err(StoreError::ProcessFinished(self.process_id.clone()));
        }
        let mut next_event = inner.next_event_seq;
        if let Some(events) = entry.events_mut() {
            for e in events.iter_mut() {
                e.seq = next_event;
                next_event += 1;
            }
        }
        let record = LogRecord {
            schema_version: SCHEMA_VERSION,
            seq: inner.next_seq,
            at_us: now_us(),
            entry,
        };
        let mut line = serde_json::to_vec(&record).expect("log record serializes");
        if torn {
            line.truncate(line.len() / 2);
        } else {
            line.push(b'\n');
        }
        inner.file.write_all(&line).map_err(|e| io_err(&self.path, e))?;
        inner.file.flush().map_err(|e| io_err(&self.path, e))?;
        if let Entry::Status { status } = record.entry {
            inner.file.sync_data().map_err(|e| io_err(&self.path, e))?;
            inner.finished = status == ProcessStatus::Finished;
        }
        if !torn {
            inner.next_seq += 1;
            inner.next_event_seq = next_event;
        }
        Ok(record)
    }
}
