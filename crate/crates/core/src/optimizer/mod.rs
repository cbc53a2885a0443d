// SPDX-License-Identifier: Apache-2.0

//! Algorithm-agnostic ask/tell optimizers.
//!
//! Every variant maximizes the told objective. `ask` hands out suggestions
//! (possibly none, while a synchronizing variant waits on a round or a
//! generation), `tell` feeds results back and returns the exploration events
//! that make each internal decision observable.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::event::ExplorationEvent;
use crate::space::{ParamAssignment, SearchSpace, SpaceError};

mod hyperband;
mod pbt;
mod random;
mod tpe;

pub use hyperband::{
    bohb_suggest, hyperband_schedule, Bracket, BohbConfig, BudgetLevels, Hyperband,
    HyperbandConfig, Round,
};
pub use pbt::{perturb_encoded, pbt_perturb, PbtConfig, Pbt, PerturbError, PerturbMode};
pub use random::{RandomConfig, RandomSearch};
pub use tpe::{good_count, tpe_suggest, tpe_suggest_encoded, Tpe, TpeConfig, TpeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrialId(pub u64);

impl fmt::Display for TrialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "parent", rename_all = "snake_case")]
pub enum Origin {
    Sampled,
    Promoted(TrialId),
    Mutated(TrialId),
}

impl Origin {
    pub fn parent(&self) -> Option<TrialId> {
        match self {
            Origin::Sampled => None,
            Origin::Promoted(p) | Origin::Mutated(p) => Some(*p),
        }
    }
}

/// A trial the caller should run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub trial_id: TrialId,
    pub assignment: ParamAssignment,
    /// Budget units this run should train, on top of any loaded checkpoint.
    pub budget: u64,
    pub origin: Origin,
    /// Trial whose checkpoint the run starts from.
    pub checkpoint_source: Option<TrialId>,
    /// True when the assignment came from a fitted density model rather than
    /// uniform sampling (TPE/BOHB) or inheritance (Hyperband/PBT).
    #[serde(default)]
    pub from_model: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

/// Result of one suggestion, in optimizer orientation (higher is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub trial_id: TrialId,
    pub objective: Option<f64>,
    pub budget_consumed: u64,
    pub status: Status,
}

impl Observation {
    pub fn ok(trial_id: TrialId, objective: f64, budget_consumed: u64) -> Self {
        Observation {
            trial_id,
            objective: Some(objective),
            budget_consumed,
            status: Status::Ok,
        }
    }

    pub fn failed(trial_id: TrialId, budget_consumed: u64) -> Self {
        Observation {
            trial_id,
            objective: None,
            budget_consumed,
            status: Status::Failed,
        }
    }

    /// The objective when the trial succeeded with a finite value.
    pub fn score(&self) -> Option<f64> {
        match (self.status, self.objective) {
            (Status::Ok, Some(v)) if v.is_finite() => Some(v),
            _ => None,
        }
    }
}

/// Ranking used at every selection boundary: finite scores descending,
/// failures after every success, ties broken by lower trial id.
pub fn rank_order(a: (TrialId, Option<f64>), b: (TrialId, Option<f64>)) -> Ordering {
    match (a.1, b.1) {
        (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.0.cmp(&b.0),
    }
}

/// Suggestions from one `ask`, plus the events describing how they were made.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Asked {
    pub suggestions: Vec<Suggestion>,
    pub events: Vec<ExplorationEvent>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizerError {
    #[error("optimizer has exhausted its budget")]
    Finished,
    #[error("trial {0} was never suggested")]
    UnknownTrial(TrialId),
    #[error("trial {0} was already told")]
    DuplicateTell(TrialId),
    #[error("trial {trial}: consumed {consumed} budget units but only {suggested} were suggested")]
    BudgetOverrun {
        trial: TrialId,
        consumed: u64,
        suggested: u64,
    },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

pub trait Optimizer: Send {
    fn ask(&mut self) -> Result<Asked, OptimizerError>;
    fn tell(&mut self, obs: &Observation) -> Result<Vec<ExplorationEvent>, OptimizerError>;
}

/// Tagged union of the supported algorithm families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Random(RandomConfig),
    Tpe(TpeConfig),
    Hyperband(HyperbandConfig),
    Bohb(BohbConfig),
    Pbt(PbtConfig),
}

impl OptimizerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Random(_) => "random",
            OptimizerConfig::Tpe(_) => "tpe",
            OptimizerConfig::Hyperband(_) => "hyperband",
            OptimizerConfig::Bohb(_) => "bohb",
            OptimizerConfig::Pbt(_) => "pbt",
        }
    }

    /// Checks every numeric invariant; the message names the violated one.
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let fail = |msg: String| Err(OptimizerError::InvalidConfig(msg));
        let gamma_ok = |g: f64| g > 0.0 && g < 1.0;
        match self {
            OptimizerConfig::Random(c) => {
                if c.trial_budget < 1 {
                    return fail(format!("trial_budget must be >= 1 (got {})", c.trial_budget));
                }
            }
            OptimizerConfig::Tpe(c) => {
                if !gamma_ok(c.gamma) {
                    return fail(format!("gamma must lie in (0, 1) (got {})", c.gamma));
                }
                if c.n_candidates < 1 {
                    return fail(format!("n_candidates must be >= 1 (got {})", c.n_candidates));
                }
                if c.trial_budget < 1 {
                    return fail(format!("trial_budget must be >= 1 (got {})", c.trial_budget));
                }
            }
            OptimizerConfig::Hyperband(c) => check_bracket_params(c.max_budget, c.eta)?,
            OptimizerConfig::Bohb(c) => {
                check_bracket_params(c.max_budget, c.eta)?;
                if !gamma_ok(c.gamma) {
                    return fail(format!("gamma must lie in (0, 1) (got {})", c.gamma));
                }
                if c.n_candidates < 1 {
                    return fail(format!("n_candidates must be >= 1 (got {})", c.n_candidates));
                }
                if !(0.0..=1.0).contains(&c.random_fraction) {
                    return fail(format!(
                        "random_fraction must lie in [0, 1] (got {})",
                        c.random_fraction
                    ));
                }
            }
            OptimizerConfig::Pbt(c) => {
                if c.population < 2 {
                    return fail(format!("population P must be >= 2 (got {})", c.population));
                }
                if !(c.survivor_rate > 0.0 && c.survivor_rate < 1.0) {
                    return fail(format!(
                        "survivor_rate S must lie in (0, 1) (got {})",
                        c.survivor_rate
                    ));
                }
                if c.generations < 1 {
                    return fail(format!("generations G must be >= 1 (got {})", c.generations));
                }
                if c.interval < 1 {
                    return fail(format!("interval T must be >= 1 (got {})", c.interval));
                }
                if !(0.0..=1.0).contains(&c.p_cat) {
                    return fail(format!("p_cat must lie in [0, 1] (got {})", c.p_cat));
                }
                c.perturb.validate()?;
            }
        }
        Ok(())
    }
}

fn check_bracket_params(max_budget: u64, eta: u64) -> Result<(), OptimizerError> {
    if max_budget < 1 {
        return Err(OptimizerError::InvalidConfig(format!(
            "max_budget R must be >= 1 (got {max_budget})"
        )));
    }
    if eta < 2 {
        return Err(OptimizerError::InvalidConfig(format!(
            "eta must be >= 2 (got {eta})"
        )));
    }
    Ok(())
}

/// Builds an optimizer for `space` that stops once `total_budget` units are
/// spent (or, for PBT, after G generations, whichever comes first).
pub fn build_optimizer(
    config: &OptimizerConfig,
    space: &SearchSpace,
    total_budget: u64,
    seed: u64,
) -> Result<Box<dyn Optimizer>, OptimizerError> {
    config.validate()?;
    Ok(match config {
        OptimizerConfig::Random(c) => Box::new(RandomSearch::new(*c, space.clone(), total_budget, seed)),
        OptimizerConfig::Tpe(c) => Box::new(Tpe::new(*c, space.clone(), total_budget, seed)),
        OptimizerConfig::Hyperband(c) => {
            Box::new(Hyperband::hyperband(*c, space.clone(), total_budget, seed))
        }
        OptimizerConfig::Bohb(c) => Box::new(Hyperband::bohb(*c, space.clone(), total_budget, seed)),
        OptimizerConfig::Pbt(c) => Box::new(Pbt::new(c.clone(), space.clone(), total_budget, seed)?),
    })
}

/// Tracks which trials are outstanding so tell can reject unknown or
/// repeated results.
#[derive(Debug, Default, Clone)]
pub(crate) struct Outstanding {
    next_id: u64,
    pending: BTreeMap<TrialId, u64>,
    told: BTreeSet<TrialId>,
}

impl Outstanding {
    pub(crate) fn issue(&mut self, budget: u64) -> TrialId {
        let id = TrialId(self.next_id);
        self.next_id += 1;
        self.pending.insert(id, budget);
        id
    }

    pub(crate) fn settle(&mut self, obs: &Observation) -> Result<(), OptimizerError> {
        if self.told.contains(&obs.trial_id) {
            return Err(OptimizerError::DuplicateTell(obs.trial_id));
        }
        let suggested = *self
            .pending
            .get(&obs.trial_id)
            .ok_or(OptimizerError::UnknownTrial(obs.trial_id))?;
        if obs.budget_consumed > suggested {
            return Err(OptimizerError::BudgetOverrun {
                trial: obs.trial_id,
                consumed: obs.budget_consumed,
                suggested,
            });
        }
        self.pending.remove(&obs.trial_id);
        self.told.insert(obs.trial_id);
        Ok(())
    }

    pub(crate) fn pending_count(&self) -> usize {
        self.pending.len()
    }
}
