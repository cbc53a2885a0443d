// SPDX-License-Identifier: Apache-2.0

//! Hyperband and BOHB.
//!
//! Brackets run one after another, most aggressive first. Within a bracket,
//! each successive-halving round is handed out as one batch; once every
//! member of the round is told, the best `n_{i+1}` successful trials are
//! promoted to the next round (resuming from their checkpoints) and the rest
//! are discarded. BOHB differs only in how round-0 configurations are drawn.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tpe::{tpe_suggest_encoded, TpeConfig};
use super::{
    rank_order, Asked, Observation, Optimizer, OptimizerError, Origin, Outstanding, Suggestion,
    TrialId,
};
use crate::event::{EventKind, ExplorationEvent};
use crate::rng::{self, DefaultRng};
use crate::space::{ParamAssignment, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperbandConfig {
    #[serde(alias = "R")]
    pub max_budget: u64,
    #[serde(default = "default_eta")]
    pub eta: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BohbConfig {
    #[serde(alias = "R")]
    pub max_budget: u64,
    #[serde(default = "default_eta")]
    pub eta: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_candidates")]
    pub n_candidates: usize,
    #[serde(default = "default_min_points_factor")]
    pub min_points_factor: usize,
    #[serde(default = "default_random_fraction")]
    pub random_fraction: f64,
}

fn default_eta() -> u64 {
    3
}
fn default_gamma() -> f64 {
    0.25
}
fn default_candidates() -> usize {
    24
}
fn default_min_points_factor() -> usize {
    1
}
fn default_random_fraction() -> f64 {
    1.0 / 3.0
}

impl BohbConfig {
    pub fn new(max_budget: u64, eta: u64) -> Self {
        BohbConfig {
            max_budget,
            eta,
            gamma: default_gamma(),
            n_candidates: default_candidates(),
            min_points_factor: default_min_points_factor(),
            random_fraction: default_random_fraction(),
        }
    }

    fn tpe(&self) -> TpeConfig {
        TpeConfig {
            gamma: self.gamma,
            n_candidates: self.n_candidates,
            n_startup: 0,
            trial_budget: 1,
        }
    }

    /// Observations a budget level needs before a model is fit on it.
    pub fn min_points(&self, dims: usize) -> usize {
        self.min_points_factor * dims + 2
    }
}

/// One successive-halving round: `n` trials, each trained to `r` units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub n: u64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: u32,
    pub rounds: Vec<Round>,
}

impl Bracket {
    /// Whole budget units a trial in round `i` has been trained to.
    pub fn units(&self, i: usize) -> u64 {
        (libm::floor(self.rounds[i].r + 1e-9) as u64).max(1)
    }

    /// Units a round-`i` run trains on top of its round-`i-1` checkpoint.
    pub fn increment(&self, i: usize) -> u64 {
        if i == 0 {
            self.units(0)
        } else {
            self.units(i) - self.units(i - 1)
        }
    }

    /// Total units the bracket spends when every round runs in full.
    pub fn cost(&self) -> u64 {
        (0..self.rounds.len())
            .map(|i| self.rounds[i].n * self.increment(i))
            .sum()
    }
}

fn ipow(base: u64, exp: u32) -> u64 {
    base.saturating_pow(exp)
}

/// The Hyperband bracket table for maximum budget `max_budget` and halving
/// factor `eta`, most aggressive bracket (`s = s_max`) first.
pub fn hyperband_schedule(max_budget: u64, eta: u64) -> Vec<Bracket> {
    let mut s_max = 0u32;
    while ipow(eta, s_max + 1) <= max_budget {
        s_max += 1;
    }
    (0..=s_max)
        .rev()
        .map(|s| {
            let width = u64::from(s_max) + 1;
            let n = (width * ipow(eta, s)).div_ceil(u64::from(s) + 1);
            let r = max_budget as f64 / ipow(eta, s) as f64;
            let rounds = (0..=s)
                .map(|i| Round {
                    n: n / ipow(eta, i),
                    r: r * ipow(eta, i) as f64,
                })
                .collect();
            Bracket { s, rounds }
        })
        .collect()
}

/// Successful observations grouped by the budget level they were trained to.
pub type BudgetLevels = BTreeMap<u64, Vec<(Vec<f64>, f64)>>;

/// Draws one BOHB configuration in encoded space. Returns the point and
/// whether it came from the model.
///
/// With probability `random_fraction` the draw is uniform. Otherwise the
/// model is fit on the largest budget level holding at least
/// [`BohbConfig::min_points`] observations; without such a level the draw is
/// uniform too.
pub fn bohb_suggest<R: Rng + ?Sized>(
    levels: &BudgetLevels,
    space: &SearchSpace,
    config: &BohbConfig,
    rng: &mut R,
) -> (Vec<f64>, bool) {
    let explore = rng.random::<f64>() < config.random_fraction;
    let threshold = config.min_points(space.len());
    let level = levels.iter().rev().find(|(_, obs)| obs.len() >= threshold);
    match (explore, level) {
        (false, Some((_, obs))) => match tpe_suggest_encoded(obs, space, &config.tpe(), rng) {
            Ok(point) => (point, true),
            Err(_) => (uniform_point(space, rng), false),
        },
        _ => (uniform_point(space, rng), false),
    }
}

fn uniform_point<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Vec<f64> {
    (0..space.len()).map(|_| rng.random::<f64>()).collect()
}

#[derive(Debug, Clone)]
struct Member {
    trial_id: TrialId,
    assignment: ParamAssignment,
    point: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ActiveBracket {
    bracket: Bracket,
    round: usize,
    members: Vec<Member>,
    results: BTreeMap<TrialId, Option<f64>>,
    handed_out: bool,
    survivors: Vec<Member>,
}

/// Hyperband, or BOHB when constructed with [`Hyperband::bohb`].
pub struct Hyperband {
    space: SearchSpace,
    schedule: Vec<Bracket>,
    bohb: Option<BohbConfig>,
    remaining_budget: u64,
    next_bracket: usize,
    active: Option<ActiveBracket>,
    iteration: u64,
    levels: BudgetLevels,
    rng: DefaultRng,
    outstanding: Outstanding,
}

impl Hyperband {
    pub fn hyperband(config: HyperbandConfig, space: SearchSpace, total_budget: u64, seed: u64) -> Self {
        Self::build(config.max_budget, config.eta, None, space, total_budget, seed)
    }

    pub fn bohb(config: BohbConfig, space: SearchSpace, total_budget: u64, seed: u64) -> Self {
        Self::build(config.max_budget, config.eta, Some(config), space, total_budget, seed)
    }

    fn build(
        max_budget: u64,
        eta: u64,
        bohb: Option<BohbConfig>,
        space: SearchSpace,
        total_budget: u64,
        seed: u64,
    ) -> Self {
        Hyperband {
            space,
            schedule: hyperband_schedule(max_budget, eta),
            bohb,
            remaining_budget: total_budget,
            next_bracket: 0,
            active: None,
            iteration: 0,
            levels: BudgetLevels::new(),
            rng: rng::seeded(seed),
            outstanding: Outstanding::default(),
        }
    }

    /// Total units of one pass over every bracket.
    pub fn sweep_cost(max_budget: u64, eta: u64) -> u64 {
        hyperband_schedule(max_budget, eta).iter().map(Bracket::cost).sum()
    }

    fn draw(&mut self) -> (ParamAssignment, Vec<f64>, bool) {
        let (point, from_model) = match &self.bohb {
            Some(cfg) => bohb_suggest(&self.levels, &self.space, cfg, &mut self.rng),
            None => (uniform_point(&self.space, &mut self.rng), false),
        };
        let assignment = self.space.decode(&point);
        // Re-encode so integer and categorical coordinates are canonical.
        let point = self.space.encode(&assignment).unwrap_or(point);
        (assignment, point, from_model)
    }

    fn open_bracket(&mut self) -> Result<(), OptimizerError> {
        let bracket = self.schedule[self.next_bracket % self.schedule.len()].clone();
        if bracket.cost() > self.remaining_budget {
            return Err(OptimizerError::Finished);
        }
        self.remaining_budget -= bracket.cost();
        self.next_bracket += 1;
        self.active = Some(ActiveBracket {
            bracket,
            round: 0,
            members: Vec::new(),
            results: BTreeMap::new(),
            handed_out: false,
            survivors: Vec::new(),
        });
        Ok(())
    }
}

impl Optimizer for Hyperband {
    fn ask(&mut self) -> Result<Asked, OptimizerError> {
        if self.active.is_none() {
            if self.outstanding.pending_count() > 0 {
                return Ok(Asked::default());
            }
            self.open_bracket()?;
        }
        if self.active.as_ref().is_some_and(|a| a.handed_out) {
            return Ok(Asked::default());
        }
        let iteration = self.iteration;
        let (round, bracket, survivors) = {
            let active = self.active.as_mut().expect("active bracket");
            (active.round, active.bracket.clone(), core::mem::take(&mut active.survivors))
        };
        let budget = bracket.increment(round);
        let mut asked = Asked::default();
        let mut members = Vec::new();
        if round == 0 {
            for _ in 0..bracket.rounds[0].n {
                let (assignment, point, from_model) = self.draw();
                let trial_id = self.outstanding.issue(budget);
                asked.events.push(ExplorationEvent {
                    iteration,
                    trial_id,
                    kind: EventKind::Sample,
                    budget,
                });
                asked.suggestions.push(Suggestion {
                    trial_id,
                    assignment: assignment.clone(),
                    budget,
                    origin: Origin::Sampled,
                    checkpoint_source: None,
                    from_model,
                });
                members.push(Member {
                    trial_id,
                    assignment,
                    point,
                });
            }
        } else {
            for parent in survivors {
                let trial_id = self.outstanding.issue(budget);
                asked.events.push(ExplorationEvent {
                    iteration,
                    trial_id,
                    kind: EventKind::Promote {
                        parent: parent.trial_id,
                    },
                    budget,
                });
                asked.suggestions.push(Suggestion {
                    trial_id,
                    assignment: parent.assignment.clone(),
                    budget,
                    origin: Origin::Promoted(parent.trial_id),
                    checkpoint_source: Some(parent.trial_id),
                    from_model: false,
                });
                members.push(Member { trial_id, ..parent });
            }
        }
        let active = self.active.as_mut().expect("active bracket");
        active.members = members;
        active.results.clear();
        active.handed_out = true;
        Ok(asked)
    }

    fn tell(&mut self, obs: &Observation) -> Result<Vec<ExplorationEvent>, OptimizerError> {
        self.outstanding.settle(obs)?;
        let active = self.active.as_mut().expect("pending trials belong to the active bracket");
        active.results.insert(obs.trial_id, obs.score());
        if active.results.len() < active.members.len() {
            return Ok(Vec::new());
        }

        // Round boundary.
        let iteration = self.iteration;
        self.iteration += 1;
        let round = active.round;
        let level = active.bracket.units(round);
        let mut ranked: Vec<(TrialId, Option<f64>)> =
            active.members.iter().map(|m| (m.trial_id, active.results[&m.trial_id])).collect();
        ranked.sort_by(|a, b| rank_order(*a, *b));

        let mut events = Vec::new();
        for m in &active.members {
            let score = active.results[&m.trial_id];
            if let Some(y) = score {
                self.levels.entry(level).or_default().push((m.point.clone(), y));
            }
            events.push(ExplorationEvent {
                iteration,
                trial_id: m.trial_id,
                kind: EventKind::Evaluate { objective: score },
                budget: level,
            });
        }

        let last_round = round + 1 >= active.bracket.rounds.len();
        let keep = if last_round {
            0
        } else {
            let ok = ranked.iter().filter(|(_, y)| y.is_some()).count() as u64;
            active.bracket.rounds[round + 1].n.min(ok) as usize
        };
        if !last_round {
            for (rank, (id, _)) in ranked.iter().enumerate() {
                let kind = if rank < keep {
                    EventKind::Survive
                } else {
                    EventKind::Discard
                };
                events.push(ExplorationEvent {
                    iteration,
                    trial_id: *id,
                    kind,
                    budget: level,
                });
            }
        }
        if keep == 0 {
            if !last_round {
                events.push(ExplorationEvent {
                    iteration,
                    trial_id: ranked[0].0,
                    kind: EventKind::Diagnostic {
                        message: format!(
                            "bracket s={} ended after round {round}: no successful trials",
                            active.bracket.s
                        ),
                    },
                    budget: level,
                });
            }
            self.active = None;
        } else {
            let by_id: BTreeMap<TrialId, &Member> =
                active.members.iter().map(|m| (m.trial_id, m)).collect();
            active.survivors = ranked[..keep].iter().map(|(id, _)| by_id[id].clone()).collect();
            active.round += 1;
            active.handed_out = false;
            active.members.clear();
        }
        Ok(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{ParamSpec, Scale};
    use alloc::vec;

    fn space(d: usize) -> SearchSpace {
        SearchSpace::new(
            (0..d)
                .map(|i| ParamSpec::continuous(&format!("x{i}"), 0.0, 1.0, Scale::Linear).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn schedule_small_cases() {
        let s = hyperband_schedule(1, 3);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].s, 0);
        assert_eq!(s[0].rounds, vec![Round { n: 1, r: 1.0 }]);

        let s = hyperband_schedule(9, 3);
        let top = &s[0];
        assert_eq!(top.s, 2);
        let rounds: Vec<(u64, f64)> = top.rounds.iter().map(|r| (r.n, r.r)).collect();
        assert_eq!(rounds, vec![(9, 1.0), (3, 3.0), (1, 9.0)]);
        assert_eq!(top.cost(), 9 * 1 + 3 * 2 + 1 * 6);
    }

    #[test]
    fn first_round_of_r9_bracket() {
        let mut hb = Hyperband::hyperband(HyperbandConfig { max_budget: 9, eta: 3 }, space(2), 1000, 0);
        let asked = hb.ask().unwrap();
        assert_eq!(asked.suggestions.len(), 9);
        assert!(asked.suggestions.iter().all(|s| s.budget == 1));
        // Waits for the round before handing out more.
        assert!(hb.ask().unwrap().suggestions.is_empty());
    }

    #[test]
    fn keeps_top_third() {
        let mut hb = Hyperband::hyperband(HyperbandConfig { max_budget: 9, eta: 3 }, space(1), 1000, 0);
        let asked = hb.ask().unwrap();
        let mut events = Vec::new();
        for (i, s) in asked.suggestions.iter().enumerate() {
            events.extend(hb.tell(&Observation::ok(s.trial_id, 0.1 * (i + 1) as f64, 1)).unwrap());
        }
        let survive: Vec<TrialId> = events
            .iter()
            .filter(|e| e.kind == EventKind::Survive)
            .map(|e| e.trial_id)
            .collect();
        let discard = events.iter().filter(|e| e.kind == EventKind::Discard).count();
        assert_eq!(survive, vec![TrialId(8), TrialId(7), TrialId(6)]);
        assert_eq!(discard, 6);
        let next = hb.ask().unwrap();
        assert_eq!(next.suggestions.len(), 3);
        for s in &next.suggestions {
            assert_eq!(s.budget, 2);
            assert_eq!(s.checkpoint_source, s.origin.parent());
            assert!(matches!(s.origin, Origin::Promoted(_)));
        }
    }

    #[test]
    fn tell_order_within_a_round_does_not_matter() {
        let run = |reverse: bool| {
            let mut hb =
                Hyperband::hyperband(HyperbandConfig { max_budget: 9, eta: 3 }, space(2), 1000, 4);
            let mut s = hb.ask().unwrap().suggestions;
            if reverse {
                s.reverse();
            }
            let mut ev = Vec::new();
            for x in &s {
                let y = x.assignment.num("x0").unwrap();
                ev.extend(hb.tell(&Observation::ok(x.trial_id, y, 1)).unwrap());
            }
            let next: Vec<_> = hb.ask().unwrap().suggestions;
            (ev.into_iter().filter(|e| e.kind == EventKind::Survive).count(), next)
        };
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn bohb_threshold_and_level_selection() {
        let cfg = BohbConfig {
            random_fraction: 0.0,
            ..BohbConfig::new(9, 3)
        };
        let sp = space(3);
        let mut rng = rng::seeded(1);
        let mut levels = BudgetLevels::new();
        levels.insert(
            1,
            (0..4).map(|i| (vec![0.1 * i as f64; 3], i as f64)).collect(),
        );
        assert_eq!(cfg.min_points(3), 5);
        for _ in 0..50 {
            assert!(!bohb_suggest(&levels, &sp, &cfg, &mut rng).1);
        }
        // 6 at budget 1, 2 at budget 3: budget 1 is the only qualifying level.
        levels.get_mut(&1).unwrap().extend((4..6).map(|i| (vec![0.1 * i as f64; 3], i as f64)));
        levels.insert(3, vec![(vec![0.5; 3], 1.0), (vec![0.6; 3], 2.0)]);
        let level = levels
            .iter()
            .rev()
            .find(|(_, o)| o.len() >= cfg.min_points(3))
            .map(|(l, _)| *l);
        assert_eq!(level, Some(1));
        assert!(bohb_suggest(&levels, &sp, &cfg, &mut rng).1);
    }

    #[test]
    fn exhausted_budget_finishes() {
        let mut hb = Hyperband::hyperband(HyperbandConfig { max_budget: 9, eta: 3 }, space(1), 5, 0);
        assert_eq!(hb.ask(), Err(OptimizerError::Finished));
    }
}
