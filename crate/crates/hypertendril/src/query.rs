// SPDX-License-Identifier: Apache-2.0

//! Read and control operations shared by the HTTP API and the CLI, so both
//! return identical data for identical queries.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use hypertendril_core::importance::{
    conditional_effect, fit_forest, marginal_curve, variance_fractions, ForestConfig, ImportanceError,
    ImportanceReport, MarginalCurve, SurrogateForest, DEFAULT_TOP_PAIRS,
};
use hypertendril_core::pareto::{pareto_front, Direction};
use hypertendril_core::series::{downsample_indices, histogram, mean_std, moving_average, running_best};
use hypertendril_core::space::Kind;
use hypertendril_core::{
    Edit, EventKind, OptimizerConfig, Origin, ParamAssignment, ParamSpec, ParamValue, Scale, SearchSpace,
    SpaceError, TrialId,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ObjectiveSpec, ProcessConfig};
use crate::runner::{self, DriveOptions};
use crate::store::{
    parse_process_id, trial_key, ProcessState, ProcessStatus, Store, StoreError, Study, TrialRecord, TrialStatus,
};
use crate::SCHEMA_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    /// A rejected request; `invariant` names the rule that failed.
    #[error("{invariant}: {message}")]
    Invalid { invariant: String, message: String },
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for QueryError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownStudy(_) | StoreError::UnknownProcess(_) | StoreError::UnknownTrial(_) => {
                QueryError::NotFound(e.to_string())
            }
            StoreError::Config(c) => QueryError::Invalid {
                invariant: c.path.clone(),
                message: c.message,
            },
            other => QueryError::Store(other),
        }
    }
}

impl From<ImportanceError> for QueryError {
    fn from(e: ImportanceError) -> Self {
        let invariant = match &e {
            ImportanceError::InsufficientData { .. } => "insufficient_data",
            ImportanceError::UnknownParam(_) => "unknown_param",
            ImportanceError::BadSubset => "subset_size",
            ImportanceError::EmptyBrush(_) => "empty_brush",
            ImportanceError::Resolution => "resolution",
            _ => "importance",
        };
        QueryError::Invalid {
            invariant: invariant.into(),
            message: e.to_string(),
        }
    }
}

fn invalid(invariant: &str, message: impl ToString) -> QueryError {
    QueryError::Invalid {
        invariant: invariant.to_string(),
        message: message.to_string(),
    }
}

fn space_invariant(e: &SpaceError) -> &'static str {
    match e {
        SpaceError::OutOfBounds { .. } => "out_of_bounds",
        SpaceError::UnknownChoice { .. } => "unknown_choice",
        SpaceError::TypeMismatch { .. } => "type_mismatch",
        SpaceError::InvalidBounds { .. } => "invalid_bounds",
        SpaceError::InvalidChoices { .. } => "invalid_choices",
        SpaceError::UnknownParam(_) => "unknown_param",
        SpaceError::DuplicateName(_) => "duplicate_name",
        SpaceError::EmptySpace => "empty_space",
        SpaceError::MissingParam(_) => "missing_param",
        SpaceError::Incompatible { .. } => "incompatible_spaces",
    }
}

/// Adds `schema_version` to a serialized response object.
pub fn versioned<T: Serialize>(body: &T) -> Value {
    let mut v = serde_json::to_value(body).expect("response serializes");
    match &mut v {
        Value::Object(map) => {
            map.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
            v
        }
        _ => serde_json::json!({ "schema_version": SCHEMA_VERSION, "items": v }),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BestTrial {
    pub trial: String,
    pub objective: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProcessSummary {
    pub process_id: String,
    pub status: ProcessStatus,
    pub algorithm: String,
    pub objective: ObjectiveSpec,
    pub total: usize,
    pub counts: BTreeMap<String, usize>,
    pub best: Option<BestTrial>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub histograms: BTreeMap<String, Histogram>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StudySummary {
    pub study: Study,
    pub processes: Vec<ProcessSummary>,
    pub total: usize,
    pub counts: BTreeMap<String, usize>,
    pub best: Option<BestTrial>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PeakPoint {
    pub index: usize,
    pub trial: String,
    pub objective: f64,
    pub best: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PeakSeries {
    pub process_id: String,
    pub direction: Direction,
    pub points: Vec<PeakPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HistoryPoint {
    pub iteration: u64,
    pub trial: String,
    pub objective: Option<f64>,
}

/// One model: a trial plus every promoted continuation of it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExplorationPoint {
    pub iteration: u64,
    pub trial: String,
    pub trials: Vec<String>,
    /// Native number; categorical values are their choice index.
    pub value: f64,
    pub label: Option<String>,
    pub objective: Option<f64>,
    pub markers: Vec<String>,
    /// Trial this model was mutated from.
    pub parent: Option<String>,
    pub history: Vec<HistoryPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamSeries {
    pub name: String,
    pub kind: Kind,
    pub scale: Option<Scale>,
    pub choices: Option<Vec<String>>,
    pub points: Vec<ExplorationPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Exploration {
    pub process_id: String,
    pub algorithm: String,
    pub params: Vec<ParamSeries>,
    pub peak: Vec<PeakPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TradeoffPoint {
    pub trial: String,
    pub process_id: String,
    pub x: f64,
    pub y: f64,
    pub on_front: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Tradeoff {
    pub x: String,
    pub y: String,
    pub xdir: Direction,
    pub ydir: Direction,
    pub points: Vec<TradeoffPoint>,
    /// Finished trials lacking either metric.
    pub missing: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Axis {
    pub name: String,
    pub kind: Kind,
    pub scale: Option<Scale>,
    pub low: f64,
    pub high: f64,
    pub choices: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParallelCoordinates {
    /// Parameter axes followed by the objective axis.
    pub axes: Vec<Axis>,
    pub trials: Vec<String>,
    /// Row-major, one row per trial; categorical cells hold the choice index.
    pub rows: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricSeries {
    pub metric: String,
    pub seen: u64,
    pub capacity: usize,
    pub smooth: usize,
    pub points: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrialMetrics {
    pub trial: String,
    pub series: Vec<MetricSeries>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TopRow {
    pub rank: usize,
    pub trial: String,
    pub process_id: String,
    pub metric: String,
    pub value: f64,
    pub assignment: ParamAssignment,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct RefinementDraft {
    pub source_processes: Vec<String>,
    #[serde(default)]
    pub edits: Vec<Edit>,
    #[serde(default)]
    pub algorithm: Option<OptimizerConfig>,
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Return the preview without creating a process.
    #[serde(default)]
    pub preview: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RefineOutcome {
    pub process_id: Option<String>,
    pub config: ProcessConfig,
}

type ImportanceKey = (String, usize, bool, usize);

/// Shared service state: the store plus caches and running drivers.
pub struct Service {
    store: Store,
    forests: Mutex<HashMap<(String, usize), Arc<SurrogateForest>>>,
    reports: Mutex<HashMap<ImportanceKey, Arc<ImportanceReport>>>,
    running: Mutex<HashMap<String, Arc<AtomicBool>>>,
    control: Mutex<()>,
}

fn metric_value(t: &TrialRecord, metric: &str) -> Option<f64> {
    if metric == "objective" {
        t.objective.filter(|v| v.is_finite())
    } else {
        t.aux.get(metric).copied().filter(|v| v.is_finite())
    }
}

fn ok_trials(state: &ProcessState) -> impl Iterator<Item = &TrialRecord> {
    state.trials.values().filter(|t| t.finished_ok())
}

fn best_of<'a>(trials: impl Iterator<Item = &'a TrialRecord>, direction: Direction) -> Option<BestTrial> {
    let mut best: Option<&TrialRecord> = None;
    for t in trials {
        let v = t.objective.expect("ok trial has objective");
        let better = match best {
            None => true,
            Some(b) => {
                let bv = b.objective.expect("ok trial has objective");
                direction.better(v, bv) || (v == bv && completion_key(t) < completion_key(b))
            }
        };
        if better {
            best = Some(t);
        }
    }
    best.map(|t| BestTrial {
        trial: t.key.clone(),
        objective: t.objective.expect("ok trial has objective"),
    })
}

fn completion_key(t: &TrialRecord) -> (u64, String, u64) {
    (
        t.finished_us.unwrap_or(u64::MAX),
        t.process_id.clone(),
        t.completed_seq.unwrap_or(u64::MAX),
    )
}

fn counts(states: &[&ProcessState]) -> (usize, BTreeMap<String, usize>) {
    let mut counts: BTreeMap<String, usize> = ["pending", "running", "ok", "failed", "discarded"]
        .iter()
        .map(|s| (s.to_string(), 0))
        .collect();
    let mut total = 0;
    for s in states {
        for t in s.trials.values() {
            *counts.entry(t.status.as_str().to_string()).or_default() += 1;
            total += 1;
        }
    }
    (total, counts)
}

/// Native position of a value on an axis: numbers as-is, labels as index.
fn axis_value(spec: &ParamSpec, v: &ParamValue) -> Option<f64> {
    match (spec.choices(), v) {
        (Some(choices), ParamValue::Label(l)) => choices.iter().position(|c| c == l).map(|i| i as f64),
        (None, ParamValue::Num(x)) => Some(*x),
        _ => None,
    }
}

fn parse_direction(s: Option<&str>, default: Direction) -> Result<Direction, QueryError> {
    match s {
        None | Some("") => Ok(default),
        Some("max") | Some("maximize") | Some("desc") => Ok(Direction::Maximize),
        Some("min") | Some("minimize") | Some("asc") => Ok(Direction::Minimize),
        Some(other) => Err(QueryError::BadRequest(format!("unknown direction `{other}`"))),
    }
}

impl Service {
    pub fn new(store: Store) -> Service {
        Service {
            store,
            forests: Mutex::new(HashMap::new()),
            reports: Mutex::new(HashMap::new()),
            running: Mutex::new(HashMap::new()),
            control: Mutex::new(()),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn create_study(&self, name: &str) -> Result<Study, QueryError> {
        Ok(self.store.create_study(name)?)
    }

    pub fn studies(&self) -> Result<Vec<Study>, QueryError> {
        Ok(self.store.list_studies()?)
    }

    pub fn create_process(&self, study_id: &str, config: &ProcessConfig) -> Result<String, QueryError> {
        let _g = self.control.lock().expect("control lock poisoned");
        self.store.study(study_id)?;
        Ok(self.store.create_process(study_id, config)?)
    }

    fn state(&self, process_id: &str) -> Result<(ProcessConfig, ProcessState), QueryError> {
        let config = self.store.process_config(process_id)?;
        let state = self.store.load_state(process_id)?;
        Ok((config, state))
    }

    fn summarize(&self, process_id: &str) -> Result<ProcessSummary, QueryError> {
        let (config, state) = self.state(process_id)?;
        let (total, counts) = counts(&[&state]);
        let direction = config.objective.direction;
        let ok: Vec<&TrialRecord> = ok_trials(&state).collect();
        let objectives: Vec<f64> = ok.iter().filter_map(|t| t.objective).collect();
        let ms = mean_std(&objectives);
        let mut histograms = BTreeMap::new();
        if !objectives.is_empty() {
            let (edges, counts) = histogram(&objectives, 10);
            histograms.insert(config.objective.metric.clone(), Histogram { edges, counts });
        }
        let aux_names: std::collections::BTreeSet<&String> = ok.iter().flat_map(|t| t.aux.keys()).collect();
        for name in aux_names {
            if *name == config.objective.metric {
                continue;
            }
            let values: Vec<f64> = ok.iter().filter_map(|t| metric_value(t, name)).collect();
            let (edges, counts) = histogram(&values, 10);
            histograms.insert(name.clone(), Histogram { edges, counts });
        }
        Ok(ProcessSummary {
            process_id: process_id.to_string(),
            status: state.status,
            algorithm: config.algorithm.name().to_string(),
            objective: config.objective.clone(),
            total,
            counts,
            best: best_of(ok.into_iter(), direction),
            mean: ms.map(|m| m.0),
            std: ms.map(|m| m.1),
            histograms,
        })
    }

    pub fn summary(&self, study_id: &str) -> Result<StudySummary, QueryError> {
        let study = self.store.study(study_id)?;
        let mut processes = Vec::new();
        let mut states = Vec::new();
        let mut direction = Direction::Maximize;
        for pid in &study.process_ids {
            processes.push(self.summarize(pid)?);
            let (config, state) = self.state(pid)?;
            direction = config.objective.direction;
            states.push(state);
        }
        let refs: Vec<&ProcessState> = states.iter().collect();
        let (total, counts) = counts(&refs);
        let ok: Vec<&TrialRecord> = states.iter().flat_map(ok_trials).collect();
        let objectives: Vec<f64> = ok.iter().filter_map(|t| t.objective).collect();
        let ms = mean_std(&objectives);
        Ok(StudySummary {
            study,
            processes,
            total,
            counts,
            best: best_of(ok.into_iter(), direction),
            mean: ms.map(|m| m.0),
            std: ms.map(|m| m.1),
        })
    }

    pub fn trials(
        &self,
        process_id: &str,
        status: Option<&str>,
        limit: Option<usize>,
    ) -> Result<Vec<TrialRecord>, QueryError> {
        let filter = match status {
            None | Some("") => None,
            Some(s) => Some(
                TrialStatus::parse(s).ok_or_else(|| QueryError::BadRequest(format!("unknown status `{s}`")))?,
            ),
        };
        let (_, state) = self.state(process_id)?;
        Ok(state
            .trials
            .into_values()
            .filter(|t| filter.is_none_or(|f| t.status == f))
            .take(limit.unwrap_or(usize::MAX))
            .collect())
    }

    fn peak_points(state: &ProcessState, direction: Direction) -> Vec<PeakPoint> {
        let done: Vec<&TrialRecord> = state
            .completions
            .iter()
            .filter_map(|(id, _)| state.trials.get(id))
            .filter(|t| t.finished_ok())
            .collect();
        let values: Vec<f64> = done.iter().filter_map(|t| t.objective).collect();
        running_best(&values, direction)
            .into_iter()
            .zip(done)
            .enumerate()
            .map(|(index, (best, t))| PeakPoint {
                index,
                trial: t.key.clone(),
                objective: t.objective.expect("ok trial has objective"),
                best,
            })
            .collect()
    }

    pub fn peak(&self, process_id: &str) -> Result<PeakSeries, QueryError> {
        let (config, state) = self.state(process_id)?;
        Ok(PeakSeries {
            process_id: process_id.to_string(),
            direction: config.objective.direction,
            points: Self::peak_points(&state, config.objective.direction),
        })
    }

    pub fn exploration(&self, process_id: &str) -> Result<Exploration, QueryError> {
        let (config, state) = self.state(process_id)?;
        // Group promoted continuations with the model they continue.
        let mut model_of: BTreeMap<TrialId, usize> = BTreeMap::new();
        let mut models: Vec<Vec<TrialId>> = Vec::new();
        for t in state.trials.values() {
            match t.origin {
                Origin::Promoted(p) if model_of.contains_key(&p) => {
                    let m = model_of[&p];
                    models[m].push(t.trial_id);
                    model_of.insert(t.trial_id, m);
                }
                _ => {
                    model_of.insert(t.trial_id, models.len());
                    models.push(vec![t.trial_id]);
                }
            }
        }
        let mut first_iteration: Vec<Option<u64>> = vec![None; models.len()];
        let mut markers: Vec<Vec<String>> = vec![Vec::new(); models.len()];
        let mut history: Vec<Vec<HistoryPoint>> = vec![Vec::new(); models.len()];
        for e in &state.events {
            let Some(&m) = model_of.get(&e.event.trial_id) else { continue };
            let marker = match &e.event.kind {
                EventKind::Sample => "sample",
                EventKind::Evaluate { objective } => {
                    history[m].push(HistoryPoint {
                        iteration: e.event.iteration,
                        trial: trial_key(process_id, e.event.trial_id),
                        objective: *objective,
                    });
                    "evaluate"
                }
                EventKind::Discard => "discard",
                EventKind::Survive => "survive",
                EventKind::Mutate { .. } => "mutate",
                EventKind::Promote { .. } => "promote",
                EventKind::Resample => "resample",
                EventKind::Diagnostic { .. } => "diagnostic",
            };
            if first_iteration[m].is_none() {
                first_iteration[m] = Some(e.event.iteration);
            }
            if markers[m].last().map(String::as_str) != Some(marker) {
                markers[m].push(marker.to_string());
            }
        }
        let params = config
            .space
            .params()
            .iter()
            .map(|spec| {
                let points = models
                    .iter()
                    .enumerate()
                    .filter_map(|(m, chain)| {
                        let root = &state.trials[&chain[0]];
                        let v = root.assignment.get(spec.name())?;
                        let objective = history[m].last().and_then(|h| h.objective).or_else(|| {
                            chain.iter().rev().find_map(|id| state.trials[id].objective)
                        });
                        Some(ExplorationPoint {
                            iteration: first_iteration[m].unwrap_or(0),
                            trial: root.key.clone(),
                            trials: chain.iter().map(|id| trial_key(process_id, *id)).collect(),
                            value: axis_value(spec, v)?,
                            label: v.as_label().map(str::to_string),
                            objective,
                            markers: markers[m].clone(),
                            parent: match root.origin {
                                Origin::Mutated(p) => Some(trial_key(process_id, p)),
                                _ => None,
                            },
                            history: history[m].clone(),
                        })
                    })
                    .collect();
                ParamSeries {
                    name: spec.name().to_string(),
                    kind: spec.kind(),
                    scale: spec.scale(),
                    choices: spec.choices().map(<[String]>::to_vec),
                    points,
                }
            })
            .collect();
        Ok(Exploration {
            process_id: process_id.to_string(),
            algorithm: config.algorithm.name().to_string(),
            params,
            peak: Self::peak_points(&state, config.objective.direction),
        })
    }

    fn forest(&self, process_id: &str) -> Result<(ProcessConfig, Arc<SurrogateForest>, usize), QueryError> {
        let (config, state) = self.state(process_id)?;
        let data: Vec<(ParamAssignment, f64)> = ok_trials(&state)
            .map(|t| (t.assignment.clone(), t.objective.expect("ok trial has objective")))
            .collect();
        let key = (process_id.to_string(), data.len());
        if let Some(f) = self.forests.lock().expect("cache poisoned").get(&key) {
            return Ok((config, Arc::clone(f), data.len()));
        }
        let forest = Arc::new(fit_forest(&data, &config.space, ForestConfig::default(), config.seed)?);
        self.forests.lock().expect("cache poisoned").insert(key, Arc::clone(&forest));
        Ok((config, forest, data.len()))
    }

    pub fn importance(&self, process_id: &str, pairs: bool, top: Option<usize>) -> Result<Arc<ImportanceReport>, QueryError> {
        let top = top.unwrap_or(DEFAULT_TOP_PAIRS);
        let (config, forest, n) = self.forest(process_id)?;
        let key = (process_id.to_string(), n, pairs, top);
        if let Some(r) = self.reports.lock().expect("cache poisoned").get(&key) {
            return Ok(Arc::clone(r));
        }
        let mut report = variance_fractions(&forest, &config.space, pairs, top);
        report.unreliable_for_pbt = matches!(config.algorithm, OptimizerConfig::Pbt(_));
        let report = Arc::new(report);
        self.reports.lock().expect("cache poisoned").insert(key, Arc::clone(&report));
        Ok(report)
    }

    pub fn marginal(&self, process_id: &str, params: &[&str], resolution: Option<usize>) -> Result<MarginalCurve, QueryError> {
        let (config, forest, _) = self.forest(process_id)?;
        let res = resolution.unwrap_or(if params.len() == 2 { 50 } else { 100 });
        Ok(marginal_curve(&forest, &config.space, params, res)?)
    }

    /// Brushes are `name:lo:hi` in native units; for categorical parameters
    /// `lo` and `hi` are labels and the range covers their bins inclusively.
    pub fn conditional(
        &self,
        process_id: &str,
        brushes: &[&str],
        target: &str,
        resolution: Option<usize>,
    ) -> Result<MarginalCurve, QueryError> {
        let (config, forest, _) = self.forest(process_id)?;
        let mut ranges: Vec<(String, f64, f64)> = Vec::new();
        for b in brushes {
            let parts: Vec<&str> = b.split(':').collect();
            let [name, lo, hi] = parts[..] else {
                return Err(QueryError::BadRequest(format!("brush `{b}` must be name:lo:hi")));
            };
            let spec = config
                .space
                .get(name)
                .ok_or_else(|| invalid("unknown_param", format!("unknown parameter `{name}`")))?;
            ranges.push((name.to_string(), encode_bound(spec, lo, false)?, encode_bound(spec, hi, true)?));
        }
        let brushed: Vec<(&str, f64, f64)> = ranges.iter().map(|(n, a, b)| (n.as_str(), *a, *b)).collect();
        Ok(conditional_effect(&forest, &config.space, &brushed, target, resolution.unwrap_or(100))?)
    }

    fn study_states(&self, study_id: &str) -> Result<Vec<(String, ProcessConfig, ProcessState)>, QueryError> {
        let study = self.store.study(study_id)?;
        study
            .process_ids
            .iter()
            .map(|pid| {
                let (c, s) = self.state(pid)?;
                Ok((pid.clone(), c, s))
            })
            .collect()
    }

    pub fn tradeoff(
        &self,
        study_id: &str,
        x: &str,
        y: &str,
        xdir: Option<&str>,
        ydir: Option<&str>,
    ) -> Result<Tradeoff, QueryError> {
        let xdir = parse_direction(xdir, Direction::Maximize)?;
        let ydir = parse_direction(ydir, Direction::Maximize)?;
        let mut points = Vec::new();
        let mut missing = 0;
        for (pid, _, state) in self.study_states(study_id)? {
            for t in ok_trials(&state) {
                match (metric_value(t, x), metric_value(t, y)) {
                    (Some(a), Some(b)) => points.push(TradeoffPoint {
                        trial: t.key.clone(),
                        process_id: pid.clone(),
                        x: a,
                        y: b,
                        on_front: false,
                    }),
                    _ => missing += 1,
                }
            }
        }
        let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
        for (p, front) in points.iter_mut().zip(pareto_front(&xy, xdir, ydir)) {
            p.on_front = front;
        }
        Ok(Tradeoff {
            x: x.to_string(),
            y: y.to_string(),
            xdir,
            ydir,
            points,
            missing,
        })
    }

    pub fn parallel(&self, study_id: &str) -> Result<ParallelCoordinates, QueryError> {
        let states = self.study_states(study_id)?;
        if states.is_empty() {
            return Ok(ParallelCoordinates {
                axes: Vec::new(),
                trials: Vec::new(),
                rows: Vec::new(),
            });
        }
        let merged = SearchSpace::merge(states.iter().map(|(_, c, _)| &c.space))
            .map_err(|e| invalid(space_invariant(&e), e))?;
        let mut axes: Vec<Axis> = merged
            .params()
            .iter()
            .map(|p| {
                let (low, high) = match (p.bounds(), p.cardinality()) {
                    (Some((l, h, _)), _) => (l, h),
                    (None, Some(k)) => (0.0, (k - 1) as f64),
                    _ => (0.0, 0.0),
                };
                Axis {
                    name: p.name().to_string(),
                    kind: p.kind(),
                    scale: p.scale(),
                    low,
                    high,
                    choices: p.choices().map(<[String]>::to_vec),
                }
            })
            .collect();
        let mut trials = Vec::new();
        let mut rows = Vec::new();
        let mut objectives = Vec::new();
        for (_, config, state) in &states {
            for t in ok_trials(state) {
                let mut row: Vec<Option<f64>> = merged
                    .params()
                    .iter()
                    .map(|spec| {
                        let v = t.assignment.get(spec.name()).or_else(|| config.fixed.get(spec.name()))?;
                        axis_value(spec, v)
                    })
                    .collect();
                for (axis, cell) in axes.iter_mut().zip(&row) {
                    if let (Some(v), true) = (cell, axis.choices.is_none()) {
                        axis.low = axis.low.min(*v);
                        axis.high = axis.high.max(*v);
                    }
                }
                let y = t.objective.expect("ok trial has objective");
                objectives.push(y);
                row.push(Some(y));
                trials.push(t.key.clone());
                rows.push(row);
            }
        }
        let metric = states.last().map(|(_, c, _)| c.objective.metric.clone()).unwrap_or_default();
        let (lo, hi) = objectives
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        axes.push(Axis {
            name: metric,
            kind: Kind::Continuous,
            scale: Some(Scale::Linear),
            low: if lo.is_finite() { lo } else { 0.0 },
            high: if hi.is_finite() { hi } else { 0.0 },
            choices: None,
        });
        Ok(ParallelCoordinates { axes, trials, rows })
    }

    pub fn metrics(
        &self,
        trial: &str,
        name: Option<&str>,
        max_points: Option<usize>,
        smooth: Option<usize>,
    ) -> Result<TrialMetrics, QueryError> {
        let records = self.store.read_metrics(trial)?;
        let window = smooth.unwrap_or(1).max(1);
        let series = records
            .into_iter()
            .filter(|r| name.is_none_or(|n| n.is_empty() || r.metric == n))
            .map(|r| {
                let values: Vec<f64> = r.samples.iter().map(|s| s.1).collect();
                let smoothed = moving_average(&values, window);
                let idx = downsample_indices(r.samples.len(), max_points.unwrap_or(usize::MAX));
                MetricSeries {
                    metric: r.metric,
                    seen: r.seen,
                    capacity: r.capacity,
                    smooth: window,
                    points: idx.into_iter().map(|i| (r.samples[i].0, smoothed[i])).collect(),
                }
            })
            .collect();
        Ok(TrialMetrics {
            trial: trial.to_string(),
            series,
        })
    }

    /// Best `k` finished trials of a process or a whole study.
    pub fn top_k(&self, scope: &str, k: usize, metric: Option<&str>, dir: Option<&str>) -> Result<Vec<TopRow>, QueryError> {
        let scoped: Vec<(String, ProcessConfig, ProcessState)> = if parse_process_id(scope).is_some() {
            let (c, s) = self.state(scope)?;
            vec![(scope.to_string(), c, s)]
        } else {
            self.study_states(scope)?
        };
        let metric = metric.unwrap_or("objective");
        let mut rows: Vec<(f64, f64, &TrialRecord)> = Vec::new();
        for (_, config, state) in &scoped {
            let default = if metric == "objective" || metric == config.objective.metric {
                config.objective.direction
            } else {
                Direction::Maximize
            };
            let d = parse_direction(dir, default)?;
            let m = if metric == config.objective.metric { "objective" } else { metric };
            for t in ok_trials(state) {
                if let Some(v) = metric_value(t, m) {
                    rows.push((d.orient(v), v, t));
                }
            }
        }
        rows.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| completion_key(a.2).cmp(&completion_key(b.2)))
        });
        Ok(rows
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (_, v, t))| TopRow {
                rank: i + 1,
                trial: t.key.clone(),
                process_id: t.process_id.clone(),
                metric: metric.to_string(),
                value: v,
                assignment: t.assignment.clone(),
            })
            .collect())
    }

    /// Builds (and unless previewing, creates) the next process of a study.
    pub fn refine(&self, study_id: &str, draft: &RefinementDraft) -> Result<RefineOutcome, QueryError> {
        let _g = self.control.lock().expect("control lock poisoned");
        let study = self.store.study(study_id)?;
        if draft.source_processes.is_empty() {
            return Err(invalid("source_processes", "at least one source process is required"));
        }
        let mut configs = Vec::new();
        for pid in &draft.source_processes {
            if !study.process_ids.contains(pid) {
                return Err(QueryError::NotFound(format!("process `{pid}` is not part of study `{study_id}`")));
            }
            configs.push(self.store.process_config(pid)?);
        }
        let base = configs.last().expect("non-empty").clone();
        let space = if configs.len() == 1 {
            base.space.clone()
        } else {
            SearchSpace::merge(configs.iter().map(|c| &c.space)).map_err(|e| invalid(space_invariant(&e), e))?
        };
        let refined = space.refine(&draft.edits).map_err(|e| invalid(space_invariant(&e), e))?;
        let mut fixed = BTreeMap::new();
        for c in &configs {
            fixed.extend(c.fixed.clone());
        }
        fixed.retain(|k, _| refined.space.get(k).is_none());
        fixed.extend(refined.fixed);
        let config = ProcessConfig {
            space: refined.space,
            fixed,
            algorithm: draft.algorithm.clone().unwrap_or(base.algorithm.clone()),
            budget: draft.budget.unwrap_or(base.budget),
            parallelism: draft.parallelism.unwrap_or(base.parallelism),
            seed: draft.seed.unwrap_or(base.seed),
            ..base
        };
        config.validate().map_err(|e| QueryError::Invalid {
            invariant: e.path.clone(),
            message: e.message,
        })?;
        let process_id = if draft.preview {
            None
        } else {
            Some(self.store.create_process(study_id, &config)?)
        };
        Ok(RefineOutcome { process_id, config })
    }

    /// Starts driving a pending process on a background thread.
    pub fn start(self: &Arc<Self>, process_id: &str) -> Result<ProcessStatus, QueryError> {
        let _g = self.control.lock().expect("control lock poisoned");
        let status = self.store.status(process_id)?;
        if status != ProcessStatus::Pending {
            return Err(QueryError::Conflict(format!(
                "process `{process_id}` is {} (only pending processes can be started)",
                serde_json::to_value(status).expect("status serializes").as_str().unwrap_or("")
            )));
        }
        if self.running.lock().expect("registry poisoned").contains_key(process_id) {
            return Err(QueryError::Conflict(format!("process `{process_id}` is already starting")));
        }
        let stop = Arc::new(AtomicBool::new(false));
        self.running
            .lock()
            .expect("registry poisoned")
            .insert(process_id.to_string(), Arc::clone(&stop));
        let me = Arc::clone(self);
        let pid = process_id.to_string();
        std::thread::spawn(move || {
            let opts = DriveOptions {
                stop,
                ..DriveOptions::default()
            };
            let _ = runner::drive(&me.store, &pid, opts);
            me.running.lock().expect("registry poisoned").remove(&pid);
        });
        Ok(ProcessStatus::Running)
    }

    /// Requests a graceful stop. Returns whether a driver was running here.
    pub fn stop(&self, process_id: &str) -> Result<bool, QueryError> {
        let _g = self.control.lock().expect("control lock poisoned");
        self.store.process_config(process_id)?;
        match self.running.lock().expect("registry poisoned").get(process_id) {
            Some(flag) => {
                flag.store(true, Ordering::SeqCst);
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Whether a driver started by this service is still running.
    pub fn is_running(&self, process_id: &str) -> bool {
        self.running.lock().expect("registry poisoned").contains_key(process_id)
    }

    pub fn process(&self, process_id: &str) -> Result<ProcessSummary, QueryError> {
        self.summarize(process_id)
    }

    pub fn process_config(&self, process_id: &str) -> Result<ProcessConfig, QueryError> {
        Ok(self.store.process_config(process_id)?)
    }
}

fn encode_bound(spec: &ParamSpec, raw: &str, upper: bool) -> Result<f64, QueryError> {
    if let Some(choices) = spec.choices() {
        let k = choices.len() as f64;
        let i = choices
            .iter()
            .position(|c| c == raw)
            .ok_or_else(|| invalid("unknown_choice", format!("`{raw}` is not a choice of `{}`", spec.name())))?;
        return Ok(if upper { (i as f64 + 1.0) / k } else { i as f64 / k });
    }
    let v: f64 = raw
        .parse()
        .map_err(|_| QueryError::BadRequest(format!("brush bound `{raw}` is not a number")))?;
    let (low, high, _) = spec.bounds().expect("numeric spec has bounds");
    spec.encode(&ParamValue::Num(v.clamp(low, high)))
        .map_err(|e| invalid(space_invariant(&e), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn versioned_adds_schema() {
        let v = versioned(&PeakSeries {
            process_id: "s1-p1".into(),
            direction: Direction::Maximize,
            points: vec![],
        });
        assert_eq!(v["schema_version"], 1);
        assert_eq!(versioned(&vec![1, 2])["items"], serde_json::json!([1, 2]));
    }

    #[test]
    fn categorical_brush_covers_bins() {
        let spec = ParamSpec::categorical("act", &["relu", "tanh", "sigmoid"]).unwrap();
        assert_eq!(encode_bound(&spec, "tanh", false).unwrap(), 1.0 / 3.0);
        assert_eq!(encode_bound(&spec, "tanh", true).unwrap(), 2.0 / 3.0);
        assert!(encode_bound(&spec, "gelu", true).is_err());
    }

    #[test]
    fn directions_parse() {
        assert_eq!(parse_direction(Some("min"), Direction::Maximize).unwrap(), Direction::Minimize);
        assert_eq!(parse_direction(None, Direction::Minimize).unwrap(), Direction::Minimize);
        assert!(parse_direction(Some("up"), Direction::Maximize).is_err());
    }
}
