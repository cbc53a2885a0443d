// SPDX-License-Identifier: Apache-2.0

//! Runs suggestions against workers and drives a process to completion.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use hypertendril_core::optimizer::Status;
use hypertendril_core::pareto::Direction;
use hypertendril_core::reservoir::Reservoir;
use hypertendril_core::{
    build_optimizer, rng, EventKind, ExplorationEvent, Observation, OptimizerError, Suggestion,
};

use crate::config::{ProcessConfig, WorkerSpec};
use crate::protocol::{parse_worker_line, StartRecord, WorkerRecord};
use crate::store::{
    now_us, trial_key, Entry, LogRecord, ProcessState, ProcessStatus, ProcessWriter, Store,
    StoreError, TrialResult,
};

/// How a worker run ended, as seen from outside the worker.
#[derive(Debug, Clone, PartialEq)]
pub enum ExecExit {
    Exited(i32),
    Killed,
    TimedOut,
    SpawnFailed(String),
}

/// Something that can run one trial and stream its output lines.
pub trait Executor: Send + Sync {
    fn execute(&self, start: &StartRecord, inactivity: Duration, on_line: &mut dyn FnMut(&str)) -> ExecExit;
}

/// Runs the worker command as a child process, one per trial.
#[derive(Debug, Clone)]
pub struct SubprocessExecutor {
    pub spec: WorkerSpec,
}

impl Executor for SubprocessExecutor {
    fn execute(&self, start: &StartRecord, inactivity: Duration, on_line: &mut dyn FnMut(&str)) -> ExecExit {
        let argv: Vec<String> = self
            .spec
            .command
            .iter()
            .map(|a| a.replace("{trial_id}", &start.trial_id))
            .collect();
        let Some((program, args)) = argv.split_first() else {
            return ExecExit::SpawnFailed("empty worker command".into());
        };
        let mut cmd = Command::new(program);
        cmd.args(args)
            .envs(&self.spec.env)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        if let Some(dir) = &self.spec.working_dir {
            cmd.current_dir(dir);
        }
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => return ExecExit::SpawnFailed(format!("cannot start `{program}`: {e}")),
        };
        if let Some(mut stdin) = child.stdin.take() {
            // A worker that exits without reading its input is judged by its output.
            let _ = writeln!(stdin, "{}", start.to_line());
        }
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel::<String>();
        let reader = std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let exit = loop {
            match rx.recv_timeout(inactivity) {
                Ok(line) => on_line(&line),
                Err(mpsc::RecvTimeoutError::Disconnected) => break None,
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    let _ = child.kill();
                    break Some(ExecExit::TimedOut);
                }
            }
        };
        let status = child.wait();
        let _ = reader.join();
        if let Some(e) = exit {
            return e;
        }
        match status {
            Ok(s) => s.code().map_or(ExecExit::Killed, ExecExit::Exited),
            Err(e) => ExecExit::SpawnFailed(e.to_string()),
        }
    }
}

/// Runs a built-in synthetic worker in-process.
#[derive(Debug, Clone)]
pub struct BuiltinExecutor {
    pub name: String,
}

impl Executor for BuiltinExecutor {
    fn execute(&self, start: &StartRecord, _inactivity: Duration, on_line: &mut dyn FnMut(&str)) -> ExecExit {
        let mut out = Vec::new();
        let code = crate::worker::run_builtin(&self.name, start, &mut out);
        for line in String::from_utf8_lossy(&out).lines() {
            on_line(line);
        }
        ExecExit::Exited(code)
    }
}

pub fn executor_for(spec: &WorkerSpec) -> Arc<dyn Executor> {
    match &spec.builtin {
        Some(name) => Arc::new(BuiltinExecutor { name: name.clone() }),
        None => Arc::new(SubprocessExecutor { spec: spec.clone() }),
    }
}

/// Everything a single run produced.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub status: Status,
    pub objective: Option<f64>,
    pub aux: BTreeMap<String, f64>,
    pub budget_consumed: u64,
    pub metrics: BTreeMap<String, Reservoir>,
    pub diagnostics: Option<String>,
    pub started_us: u64,
    pub finished_us: u64,
}

/// Runs one trial and turns whatever the worker did into an outcome.
/// Worker misbehaviour becomes a failed outcome, never an error.
pub fn run_trial(
    executor: &dyn Executor,
    start: &StartRecord,
    timeout_per_unit_s: f64,
    reservoir_capacity: usize,
    reservoir_seed: u64,
) -> TrialOutcome {
    let started_us = now_us();
    let mut metrics: BTreeMap<String, Reservoir> = BTreeMap::new();
    let mut rng = rng::seeded(reservoir_seed);
    let mut last_step: Option<u64> = None;
    let mut steps_seen = 0u64;
    let mut terminal: Option<WorkerRecord> = None;
    let mut problem: Option<String> = None;

    if let Some(ck) = &start.checkpoint_in {
        if !ck.exists() {
            return TrialOutcome {
                status: Status::Failed,
                objective: None,
                aux: BTreeMap::new(),
                budget_consumed: 0,
                metrics,
                diagnostics: Some(format!("checkpoint_in {} does not exist", ck.display())),
                started_us,
                finished_us: now_us(),
            };
        }
    }

    let inactivity = Duration::from_secs_f64((timeout_per_unit_s * start.budget.max(1) as f64).min(1e9));
    let exit = executor.execute(start, inactivity, &mut |line: &str| {
        if problem.is_some() || line.trim().is_empty() {
            return;
        }
        let record = match parse_worker_line(line) {
            Ok(r) => r,
            Err(e) => {
                problem = Some(if line.contains("NaN") || line.contains("Infinity") {
                    "non-finite value in worker record".to_string()
                } else {
                    e
                });
                return;
            }
        };
        if terminal.is_some() {
            problem = Some("record after terminal record".into());
            return;
        }
        match record {
            WorkerRecord::Metric { step, values } => {
                if last_step.is_some_and(|l| step < l) {
                    problem = Some(format!("metric step {step} decreases"));
                    return;
                }
                if last_step == Some(step) {
                    return;
                }
                last_step = Some(step);
                steps_seen += 1;
                for (name, v) in values {
                    let r = metrics
                        .entry(name)
                        .or_insert_with(|| Reservoir::new(reservoir_capacity.max(1)).expect("capacity >= 1"));
                    let _ = r.append(step, v, &mut rng);
                }
            }
            t => terminal = Some(t),
        }
    });
    let finished_us = now_us();

    let failed = |reason: String| (Status::Failed, None, BTreeMap::new(), Some(reason));
    let (status, objective, aux, diagnostics) = match (exit, terminal) {
        (ExecExit::TimedOut, _) => failed(format!(
            "timeout: no output for {:.1}s",
            inactivity.as_secs_f64()
        )),
        (ExecExit::SpawnFailed(e), _) => failed(e),
        (_, _) if problem.is_some() => failed(problem.unwrap_or_default()),
        (ExecExit::Killed, _) => failed("worker killed by signal".into()),
        (ExecExit::Exited(c), None) => failed(format!("worker exited with code {c} without a terminal record")),
        (ExecExit::Exited(_), Some(WorkerRecord::Fail { reason })) => failed(reason),
        (ExecExit::Exited(c), Some(WorkerRecord::Done { .. })) if c != 0 => {
            failed(format!("worker exited with code {c} after done"))
        }
        (ExecExit::Exited(_), Some(WorkerRecord::Done { objective, aux })) => {
            if objective.is_finite() {
                (Status::Ok, Some(objective), aux, None)
            } else {
                failed("non-finite objective".into())
            }
        }
        (ExecExit::Exited(_), Some(WorkerRecord::Metric { .. })) => unreachable!("metrics are never terminal"),
    };
    TrialOutcome {
        budget_consumed: if status == Status::Ok {
            start.budget
        } else {
            steps_seen.min(start.budget)
        },
        status,
        objective,
        aux,
        metrics,
        diagnostics,
        started_us,
        finished_us,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("optimizer: {0}")]
    Optimizer(#[from] OptimizerError),
    #[error("event log of `{process_id}` does not match the optimizer at record {seq}: {message}")]
    Diverged {
        process_id: String,
        seq: u64,
        message: String,
    },
    #[error("process `{0}` made no progress: optimizer is waiting but no trial is running")]
    Stalled(String),
    #[error("simulated crash after {0} log records")]
    InjectedCrash(u64),
}

#[derive(Clone, Default)]
pub struct DriveOptions {
    /// Set to request a graceful stop.
    pub stop: Arc<AtomicBool>,
    /// Overrides the executor derived from the worker spec.
    pub executor: Option<Arc<dyn Executor>>,
    /// Test hook: after this many appends in this session, write a torn
    /// record and fail as if the engine had died.
    pub crash_after_records: Option<u64>,
}

struct Session<'a> {
    store: &'a Store,
    writer: ProcessWriter,
    state: ProcessState,
    direction: Direction,
    appended: u64,
    crash_after: Option<u64>,
}

impl Session<'_> {
    fn log(&mut self, entry: Entry) -> Result<LogRecord, RunnerError> {
        if self.crash_after == Some(self.appended) {
            self.writer.append_torn(entry)?;
            return Err(RunnerError::InjectedCrash(self.appended));
        }
        let rec = self.writer.append(entry)?;
        self.appended += 1;
        self.state.apply(&rec).map_err(|e| RunnerError::Diverged {
            process_id: self.state.process_id.clone(),
            seq: e.seq,
            message: e.message,
        })?;
        Ok(rec)
    }

    /// Converts optimizer-orientation objectives back to metric units.
    fn raw_events(&self, events: Vec<ExplorationEvent>) -> Vec<ExplorationEvent> {
        events
            .into_iter()
            .map(|mut e| {
                if let EventKind::Evaluate { objective } = &mut e.kind {
                    *objective = objective.map(|v| self.direction.orient(v));
                }
                e
            })
            .collect()
    }

    fn finish(&mut self, status: ProcessStatus) -> Result<ProcessStatus, RunnerError> {
        self.log(Entry::Status { status })?;
        self.store.write_snapshot(&self.state)?;
        Ok(status)
    }
}

fn observation(result: &TrialResult, direction: Direction) -> Observation {
    match (result.status, result.objective) {
        (Status::Ok, Some(v)) => Observation::ok(result.trial_id, direction.orient(v), result.budget_consumed),
        _ => Observation::failed(result.trial_id, result.budget_consumed),
    }
}

fn same_suggestions(a: &[Suggestion], b: &[Suggestion]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.trial_id == y.trial_id && x.budget == y.budget && x.origin == y.origin && {
                let (ex, ey) = (serde_json::to_string(&x.assignment), serde_json::to_string(&y.assignment));
                ex.ok() == ey.ok()
            }
        })
}

/// Runs a process until the optimizer finishes or a stop is requested.
/// Resumes transparently from whatever the event log already holds.
pub fn drive(store: &Store, process_id: &str, opts: DriveOptions) -> Result<ProcessStatus, RunnerError> {
    let config: ProcessConfig = store.process_config(process_id)?;
    let (writer, records) = store.open_writer(process_id)?;
    let state = ProcessState::replay(process_id, &records).map_err(|source| StoreError::Replay {
        process_id: process_id.to_string(),
        source,
    })?;
    if state.status == ProcessStatus::Finished {
        return Err(StoreError::ProcessFinished(process_id.to_string()).into());
    }
    let direction = config.objective.direction;
    let mut opt = build_optimizer(&config.algorithm, &config.space, config.budget, config.seed)?;

    let diverged = |seq: u64, message: String| RunnerError::Diverged {
        process_id: process_id.to_string(),
        seq,
        message,
    };
    for rec in &records {
        match &rec.entry {
            Entry::Asked { suggestions, .. } => {
                let asked = opt.ask().map_err(|e| diverged(rec.seq, e.to_string()))?;
                if !same_suggestions(&asked.suggestions, suggestions) {
                    return Err(diverged(rec.seq, "suggestions differ on replay".into()));
                }
            }
            Entry::Told { result, .. } => {
                opt.tell(&observation(result, direction))
                    .map_err(|e| diverged(rec.seq, e.to_string()))?;
            }
            _ => {}
        }
    }
    let mut queue: VecDeque<Suggestion> = records
        .iter()
        .filter_map(|r| match &r.entry {
            Entry::Asked { suggestions, .. } => Some(suggestions.iter()),
            _ => None,
        })
        .flatten()
        .filter(|s| state.trials.get(&s.trial_id).is_some_and(|t| t.completed_seq.is_none()))
        .cloned()
        .collect();

    let executor = opts.executor.clone().unwrap_or_else(|| executor_for(&config.worker));
    let ckdir = store.checkpoint_dir(process_id, &config)?;
    let mut session = Session {
        store,
        writer,
        state,
        direction,
        appended: 0,
        crash_after: opts.crash_after_records,
    };
    session.log(Entry::Status {
        status: ProcessStatus::Running,
    })?;

    let (tx, rx) = mpsc::channel::<(Suggestion, TrialOutcome)>();
    let mut running = 0usize;
    let mut optimizer_done = false;
    let result = (|| -> Result<ProcessStatus, RunnerError> {
        loop {
            let stopping = opts.stop.load(Ordering::SeqCst);
            while !stopping && running < config.parallelism {
                if queue.is_empty() && !optimizer_done {
                    match opt.ask() {
                        Ok(asked) if asked.suggestions.is_empty() && asked.events.is_empty() => break,
                        Ok(asked) => {
                            let events = session.raw_events(asked.events);
                            queue.extend(asked.suggestions.iter().cloned());
                            session.log(Entry::asked(asked.suggestions, events))?;
                        }
                        Err(OptimizerError::Finished) => optimizer_done = true,
                        Err(e) => return Err(e.into()),
                    }
                }
                let Some(s) = queue.pop_front() else { break };
                session.log(Entry::Started { trial_id: s.trial_id })?;
                let mut params = config.fixed.clone();
                params.extend(s.assignment.iter().map(|(k, v)| (k.clone(), v.clone())));
                let start = StartRecord {
                    trial_id: trial_key(process_id, s.trial_id),
                    params,
                    budget: s.budget,
                    checkpoint_in: s
                        .checkpoint_source
                        .map(|p| ckdir.join(format!("{}.ckpt", trial_key(process_id, p)))),
                    checkpoint_out: ckdir.join(format!("{}.ckpt", trial_key(process_id, s.trial_id))),
                };
                let exec = Arc::clone(&executor);
                let tx = tx.clone();
                let timeout = config.worker.timeout_per_unit_s;
                let capacity = config.reservoir_capacity;
                let seed = rng::derive(config.seed, s.trial_id.0);
                std::thread::spawn(move || {
                    let outcome = run_trial(exec.as_ref(), &start, timeout, capacity, seed);
                    let _ = tx.send((s, outcome));
                });
                running += 1;
            }
            if running == 0 {
                if stopping {
                    return session.finish(ProcessStatus::Stopped);
                }
                if optimizer_done && queue.is_empty() {
                    return session.finish(ProcessStatus::Finished);
                }
                if queue.is_empty() {
                    return Err(RunnerError::Stalled(process_id.to_string()));
                }
                continue;
            }
            let (s, outcome) = match rx.recv_timeout(Duration::from_millis(50)) {
                Ok(done) => done,
                Err(_) => continue,
            };
            running -= 1;
            let key = trial_key(process_id, s.trial_id);
            store.write_metrics(process_id, &key, &outcome.metrics)?;
            let result = TrialResult {
                trial_id: s.trial_id,
                status: outcome.status,
                objective: outcome.objective,
                budget_consumed: outcome.budget_consumed,
                aux: outcome.aux,
                diagnostics: outcome.diagnostics,
                started_us: outcome.started_us,
                finished_us: outcome.finished_us,
            };
            let events = opt.tell(&observation(&result, direction))?;
            let events = session.raw_events(events);
            session.log(Entry::told(result, events))?;
        }
    })();
    if result.is_err() {
        // Let in-flight workers finish before handing the process back.
        for _ in 0..running {
            let _ = rx.recv();
        }
    }
    result
}

/// Runs the driver on a background thread; the returned flag stops it.
pub fn spawn_drive(
    store: Store,
    process_id: String,
    opts: DriveOptions,
) -> std::thread::JoinHandle<Result<ProcessStatus, RunnerError>> {
    std::thread::spawn(move || drive(&store, &process_id, opts))
}
