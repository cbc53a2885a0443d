// SPDX-License-Identifier: Apache-2.0

//! Trial records rebuilt from the event log. The live driver and replay use
//! the same `apply`, so the snapshot is reproducible from the log alone.

use std::collections::BTreeMap;

use hypertendril_core::optimizer::Status;
use hypertendril_core::{EventKind, Origin, ParamAssignment, TrialId};
use serde::{Deserialize, Serialize};

use super::log::{Entry, LogRecord, ProcessStatus, StoredEvent};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Pending,
    Running,
    Ok,
    Failed,
    Discarded,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Pending => "pending",
            TrialStatus::Running => "running",
            TrialStatus::Ok => "ok",
            TrialStatus::Failed => "failed",
            TrialStatus::Discarded => "discarded",
        }
    }

    pub fn parse(s: &str) -> Option<TrialStatus> {
        [
            TrialStatus::Pending,
            TrialStatus::Running,
            TrialStatus::Ok,
            TrialStatus::Failed,
            TrialStatus::Discarded,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema_version: u32,
    pub trial_id: TrialId,
    /// Store-wide key, `<process>-t<id>`.
    pub key: String,
    pub process_id: String,
    pub assignment: ParamAssignment,
    pub budget: u64,
    pub origin: Origin,
    pub checkpoint_source: Option<TrialId>,
    pub from_model: bool,
    pub status: TrialStatus,
    /// Last reported objective; kept when the trial is later discarded.
    pub objective: Option<f64>,
    /// Whether the run itself succeeded (discarded trials may have).
    pub run_ok: bool,
    pub budget_consumed: u64,
    pub aux: BTreeMap<String, f64>,
    pub diagnostics: Option<String>,
    pub created_us: u64,
    pub started_us: Option<u64>,
    pub finished_us: Option<u64>,
    /// Log sequence of the completion record; orders ties by completion.
    pub completed_seq: Option<u64>,
}

impl TrialRecord {
    /// Finished with a finite objective, whether or not later discarded.
    pub fn finished_ok(&self) -> bool {
        self.run_ok && self.objective.is_some_and(f64::is_finite)
    }
}

pub fn trial_key(process_id: &str, id: TrialId) -> String {
    format!("{process_id}-t{}", id.0)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("record {seq}: {message}")]
pub struct ReplayError {
    pub seq: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessState {
    pub process_id: String,
    pub status: ProcessStatus,
    pub trials: BTreeMap<TrialId, TrialRecord>,
    pub events: Vec<StoredEvent>,
    /// Told results in completion order: (trial, log seq).
    pub completions: Vec<(TrialId, u64)>,
    last_seq: Option<u64>,
}

impl ProcessState {
    pub fn new(process_id: &str) -> Self {
        ProcessState {
            process_id: process_id.to_string(),
            status: ProcessStatus::Pending,
            trials: BTreeMap::new(),
            events: Vec::new(),
            completions: Vec::new(),
            last_seq: None,
        }
    }

    pub fn replay<'a, I>(process_id: &str, records: I) -> Result<Self, ReplayError>
    where
        I: IntoIterator<Item = &'a LogRecord>,
    {
        let mut state = ProcessState::new(process_id);
        for r in records {
            state.apply(r)?;
        }
        Ok(state)
    }

    pub fn apply(&mut self, record: &LogRecord) -> Result<(), ReplayError> {
        let fail = |message: String| ReplayError {
            seq: record.seq,
            message,
        };
        if self.last_seq.is_some_and(|s| record.seq <= s) {
            return Err(fail("sequence numbers must increase".into()));
        }
        self.last_seq = Some(record.seq);
        match &record.entry {
            Entry::Status { status } => self.status = *status,
            Entry::Asked {
                suggestions,
                events,
            } => {
                for s in suggestions {
                    if self.trials.contains_key(&s.trial_id) {
                        return Err(fail(format!("trial {} asked twice", s.trial_id)));
                    }
                    if let Some(p) = s.origin.parent() {
                        if !self.trials.contains_key(&p) {
                            return Err(fail(format!("trial {} has unknown parent {p}", s.trial_id)));
                        }
                    }
                    self.trials.insert(
                        s.trial_id,
                        TrialRecord {
                            schema_version: SCHEMA_VERSION,
                            trial_id: s.trial_id,
                            key: trial_key(&self.process_id, s.trial_id),
                            process_id: self.process_id.clone(),
                            assignment: s.assignment.clone(),
                            budget: s.budget,
                            origin: s.origin,
                            checkpoint_source: s.checkpoint_source,
                            from_model: s.from_model,
                            status: TrialStatus::Pending,
                            objective: None,
                            run_ok: false,
                            budget_consumed: 0,
                            aux: BTreeMap::new(),
                            diagnostics: None,
                            created_us: record.at_us,
                            started_us: None,
                            finished_us: None,
                            completed_seq: None,
                        },
                    );
                }
                self.apply_events(events, record.seq)?;
            }
            Entry::Started { trial_id } => {
                let t = self
                    .trials
                    .get_mut(trial_id)
                    .ok_or_else(|| fail(format!("start of unknown trial {trial_id}")))?;
                if t.completed_seq.is_some() {
                    return Err(fail(format!("trial {trial_id} started after completion")));
                }
                t.status = TrialStatus::Running;
                t.started_us = Some(record.at_us);
            }
            Entry::Told { result, events } => {
                let t = self
                    .trials
                    .get_mut(&result.trial_id)
                    .ok_or_else(|| fail(format!("result for unknown trial {}", result.trial_id)))?;
                if t.completed_seq.is_some() {
                    return Err(fail(format!("trial {} told twice", result.trial_id)));
                }
                t.run_ok = result.status == Status::Ok;
                t.status = if t.run_ok {
                    TrialStatus::Ok
                } else {
                    TrialStatus::Failed
                };
                t.objective = result.objective;
                t.budget_consumed = result.budget_consumed;
                t.aux = result.aux.clone();
                t.diagnostics = result.diagnostics.clone();
                t.started_us = Some(result.started_us);
                t.finished_us = Some(result.finished_us);
                t.completed_seq = Some(record.seq);
                self.completions.push((result.trial_id, record.seq));
                self.apply_events(events, record.seq)?;
            }
        }
        Ok(())
    }

    fn apply_events(&mut self, events: &[StoredEvent], seq: u64) -> Result<(), ReplayError> {
        for e in events {
            if self.events.last().is_some_and(|l| e.seq <= l.seq) {
                return Err(ReplayError {
                    seq,
                    message: "event sequence numbers must increase".into(),
                });
            }
            if let EventKind::Discard = e.event.kind {
                if let Some(t) = self.trials.get_mut(&e.event.trial_id) {
                    if t.status == TrialStatus::Ok {
                        t.status = TrialStatus::Discarded;
                    }
                }
            }
            self.events.push(e.clone());
        }
        Ok(())
    }

    /// Snapshot text for `trials.jsonl`, one record per line in id order.
    pub fn snapshot_text(&self) -> String {
        let mut out = String::new();
        for t in self.trials.values() {
            out.push_str(&serde_json::to_string(t).expect("trial record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn count(&self, status: TrialStatus) -> usize {
        self.trials.values().filter(|t| t.status == status).count()
    }
}
