// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hypertendril::config::{ObjectiveSpec, ProcessConfig, WorkerSpec};
use hypertendril::store::log::{Entry, ProcessStatus};
use hypertendril::store::state::{ProcessState, TrialStatus};
use hypertendril::store::Store;
use hypertendril::SCHEMA_VERSION;
use hypertendril_core::pareto::Direction;
use hypertendril_core::{EventKind, OptimizerConfig, Origin, ParamSpec, Scale, SearchSpace, TrialId};

pub fn unit_space(names: &[&str]) -> SearchSpace {
    SearchSpace::new(names.iter().map(|n| ParamSpec::continuous(n, 0.0, 1.0, Scale::Linear).unwrap()).collect()).unwrap()
}

pub fn config(
    builtin: &str,
    direction: Direction,
    space: SearchSpace,
    algorithm: OptimizerConfig,
    budget: u64,
    seed: u64,
) -> ProcessConfig {
    ProcessConfig {
        schema_version: SCHEMA_VERSION,
        objective: ObjectiveSpec { metric: "objective".into(), direction },
        space,
        fixed: BTreeMap::new(),
        algorithm,
        budget,
        parallelism: 1,
        seed,
        worker: WorkerSpec::builtin(builtin),
        reservoir_capacity: 100,
    }
}

pub fn temp_store() -> (tempfile::TempDir, Store) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path().join("store")).unwrap();
    (dir, store)
}

/// Checks the structural invariants of a finished process log and that
/// replaying it reproduces the stored snapshot byte for byte.
pub fn check_process(store: &Store, pid: &str) -> Result<ProcessState, String> {
    let records = store.read_log(pid).map_err(|e| e.to_string())?;
    for (i, r) in records.iter().enumerate() {
        if r.seq != i as u64 {
            return Err(format!("record {i} has seq {}", r.seq));
        }
    }
    let state = ProcessState::replay(pid, &records).map_err(|e| e.to_string())?;
    if state.status != ProcessStatus::Finished {
        return Err(format!("status {:?}", state.status));
    }
    let snapshot = store.read_snapshot(pid).map_err(|e| e.to_string())?.ok_or("no snapshot")?;
    if snapshot != state.snapshot_text() {
        return Err("replayed state differs from snapshot".into());
    }

    let mut asked = BTreeSet::new();
    let mut told = BTreeSet::new();
    for r in &records {
        match &r.entry {
            Entry::Asked { suggestions, .. } => {
                for s in suggestions {
                    if !asked.insert(s.trial_id) {
                        return Err(format!("trial {} asked twice", s.trial_id));
                    }
                }
            }
            Entry::Told { result, .. } => {
                if !asked.contains(&result.trial_id) || !told.insert(result.trial_id) {
                    return Err(format!("trial {} told out of order", result.trial_id));
                }
            }
            _ => {}
        }
    }
    if asked != told {
        return Err(format!("{} trials never told", asked.len() - told.len()));
    }
    for t in state.trials.values() {
        if matches!(t.status, TrialStatus::Pending | TrialStatus::Running) {
            return Err(format!("trial {} left {:?}", t.key, t.status));
        }
        if t.budget_consumed > t.budget {
            return Err(format!("trial {} overran its budget", t.key));
        }
    }
    let config = store.process_config(pid).map_err(|e| e.to_string())?;
    if let OptimizerConfig::Pbt(pbt) = &config.algorithm {
        check_pbt(&state, pbt.population, pbt.survivors())?;
    }
    Ok(state)
}

fn check_pbt(state: &ProcessState, population: usize, k: usize) -> Result<(), String> {
    let mut generations: BTreeMap<u64, Vec<&EventKind>> = BTreeMap::new();
    let mut survivors: BTreeMap<u64, BTreeSet<TrialId>> = BTreeMap::new();
    for e in &state.events {
        generations.entry(e.event.iteration).or_default().push(&e.event.kind);
        if e.event.kind == EventKind::Survive {
            survivors.entry(e.event.iteration).or_default().insert(e.event.trial_id);
        }
    }
    for (g, kinds) in &generations {
        let count = |k: &EventKind| kinds.iter().filter(|x| **x == k).count();
        let evaluated = kinds.iter().filter(|x| matches!(x, EventKind::Evaluate { .. })).count();
        if evaluated != population {
            return Err(format!("generation {g}: {evaluated} evaluations"));
        }
        let (s, d) = (count(&EventKind::Survive), count(&EventKind::Discard));
        if s + d != population || (s != k && !kinds.iter().any(|x| matches!(x, EventKind::Evaluate { objective: None }))) {
            return Err(format!("generation {g}: {s} survive, {d} discard"));
        }
    }
    for t in state.trials.values() {
        if let Origin::Promoted(p) | Origin::Mutated(p) = t.origin {
            let parent = state.trials.get(&p).ok_or("unknown parent")?;
            let generation_of = |id: TrialId| {
                state.events.iter().find(|e| e.event.trial_id == id).map(|e| e.event.iteration)
            };
            let g = generation_of(p).ok_or("parent has no events")?;
            if !survivors.get(&g).is_some_and(|s| s.contains(&p)) {
                return Err(format!("trial {} descends from non-survivor {}", t.key, parent.key));
            }
            if t.checkpoint_source != Some(p) {
                return Err(format!("trial {} does not resume its parent's checkpoint", t.key));
            }
        }
    }
    Ok(())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}
