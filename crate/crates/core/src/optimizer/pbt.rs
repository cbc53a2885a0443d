// SPDX-License-Identifier: Apache-2.0

//! Population-based training.
//!
//! A population of `P` trials trains for `T` units per generation. At every
//! generation boundary the best `k = max(1, floor(S * P))` survive and keep
//! training from their own checkpoints; the other `P - k` slots are refilled
//! by copying a random survivor's checkpoint and perturbing its
//! hyperparameters.
//!
//! Perturbation happens in encoded space by default: a fixed step up or down
//! on the unit interval. Multiplying native values by a factor ignores the
//! dimension's scale and drifts linear dimensions toward their low end, so
//! the native-factor mode is only accepted for log-scale dimensions, where a
//! constant factor is a constant encoded step.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    rank_order, Asked, Observation, Optimizer, OptimizerError, Origin, Outstanding, Suggestion,
    TrialId,
};
use crate::event::{EventKind, ExplorationEvent};
use crate::rng::{self, DefaultRng};
use crate::space::{ParamAssignment, ParamSpec, ParamValue, SearchSpace, SpaceError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PerturbMode {
    EncodedStep { step: f64 },
    NativeFactor { lo: f64, hi: f64 },
}

impl Default for PerturbMode {
    fn default() -> Self {
        PerturbMode::EncodedStep { step: 0.1 }
    }
}

impl PerturbMode {
    pub(crate) fn validate(&self) -> Result<(), OptimizerError> {
        match *self {
            PerturbMode::EncodedStep { step } if !(step > 0.0 && step <= 1.0) => Err(
                OptimizerError::InvalidConfig(format!("perturb step must lie in (0, 1] (got {step})")),
            ),
            PerturbMode::NativeFactor { lo, hi } if !(lo > 0.0 && hi > 0.0) => Err(
                OptimizerError::InvalidConfig("perturb factors must be positive".to_string()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbtConfig {
    #[serde(alias = "P")]
    pub population: usize,
    #[serde(alias = "T")]
    pub interval: u64,
    #[serde(alias = "S")]
    pub survivor_rate: f64,
    #[serde(alias = "G")]
    pub generations: u64,
    #[serde(default)]
    pub perturb: PerturbMode,
    #[serde(default = "default_p_cat")]
    pub p_cat: f64,
}

fn default_p_cat() -> f64 {
    0.2
}

impl PbtConfig {
    pub fn new(population: usize, interval: u64, survivor_rate: f64, generations: u64) -> Self {
        PbtConfig {
            population,
            interval,
            survivor_rate,
            generations,
            perturb: PerturbMode::default(),
            p_cat: default_p_cat(),
        }
    }

    /// Number of survivors per generation.
    pub fn survivors(&self) -> usize {
        (libm::floor(self.survivor_rate * self.population as f64) as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerturbError {
    #[error("native-factor perturbation is only supported for log-scale parameters (`{0}`)")]
    ModeUnsupported(alloc::string::String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Moves `value` by `step` on the unit interval in direction `up`, clamping
/// at the bounds.
pub fn perturb_encoded(
    spec: &ParamSpec,
    value: &ParamValue,
    step: f64,
    up: bool,
) -> Result<ParamValue, SpaceError> {
    let u = spec.encode(value)?;
    let moved = if up { u + step } else { u - step };
    Ok(spec.decode(moved.clamp(0.0, 1.0)))
}

/// PBT's explore step for one dimension.
pub fn pbt_perturb<R: Rng + ?Sized>(
    spec: &ParamSpec,
    value: &ParamValue,
    mode: PerturbMode,
    p_cat: f64,
    rng: &mut R,
) -> Result<ParamValue, PerturbError> {
    if let Some(choices) = spec.choices() {
        if let PerturbMode::NativeFactor { .. } = mode {
            return Err(PerturbError::ModeUnsupported(spec.name().to_string()));
        }
        spec.check(value)?;
        if rng.random::<f64>() >= p_cat {
            return Ok(value.clone());
        }
        let current = value.as_label().unwrap_or_default();
        let others: Vec<&alloc::string::String> = choices.iter().filter(|c| *c != current).collect();
        let pick = others[rng.random_range(0..others.len())];
        return Ok(ParamValue::Label(pick.clone()));
    }
    match mode {
        PerturbMode::EncodedStep { step } => {
            let up = rng.random::<bool>();
            Ok(perturb_encoded(spec, value, step, up)?)
        }
        PerturbMode::NativeFactor { lo, hi } => {
            if !spec.is_log() {
                return Err(PerturbError::ModeUnsupported(spec.name().to_string()));
            }
            spec.check(value)?;
            let (low, high, _) = spec.bounds().expect("numeric");
            let factor = if rng.random::<bool>() { hi } else { lo };
            let v = value.as_f64().expect("numeric") * factor;
            let v = v.clamp(low, high);
            // Integer dimensions still land on whole numbers.
            Ok(spec.decode(spec.encode(&ParamValue::Num(v))?))
        }
    }
}

#[derive(Debug, Clone)]
struct Member {
    trial_id: TrialId,
    assignment: ParamAssignment,
}

pub struct Pbt {
    space: SearchSpace,
    config: PbtConfig,
    generations: u64,
    generation: u64,
    members: Vec<Member>,
    results: alloc::collections::BTreeMap<TrialId, Option<f64>>,
    handed_out: bool,
    survivors: Vec<Member>,
    resample: bool,
    rng: DefaultRng,
    outstanding: Outstanding,
}

impl Pbt {
    pub fn new(
        config: PbtConfig,
        space: SearchSpace,
        total_budget: u64,
        seed: u64,
    ) -> Result<Self, OptimizerError> {
        if let PerturbMode::NativeFactor { .. } = config.perturb {
            if let Some(p) = space.params().iter().find(|p| !p.is_log()) {
                return Err(OptimizerError::InvalidConfig(format!(
                    "native_factor perturbation requires every parameter to be log-scale; `{}` is not",
                    p.name()
                )));
            }
        }
        let per_generation = config.population as u64 * config.interval;
        let generations = config.generations.min(total_budget / per_generation.max(1));
        Ok(Pbt {
            space,
            config,
            generations,
            generation: 0,
            members: Vec::new(),
            results: Default::default(),
            handed_out: false,
            survivors: Vec::new(),
            resample: false,
            rng: rng::seeded(seed),
            outstanding: Outstanding::default(),
        })
    }

    fn fresh(&mut self, kind: EventKind, asked: &mut Asked) {
        let budget = self.config.interval;
        for _ in 0..self.config.population {
            let assignment = self.space.sample_with(&mut self.rng);
            let trial_id = self.outstanding.issue(budget);
            asked.events.push(ExplorationEvent {
                iteration: self.generation,
                trial_id,
                kind: kind.clone(),
                budget,
            });
            asked.suggestions.push(Suggestion {
                trial_id,
                assignment: assignment.clone(),
                budget,
                origin: Origin::Sampled,
                checkpoint_source: None,
                from_model: false,
            });
            self.members.push(Member {
                trial_id,
                assignment,
            });
        }
    }

    fn mutate(&mut self, parent: &ParamAssignment) -> Result<ParamAssignment, OptimizerError> {
        let mut child = ParamAssignment::new();
        for spec in self.space.params() {
            let value = parent
                .get(spec.name())
                .ok_or_else(|| SpaceError::MissingParam(spec.name().to_string()))?;
            let next = pbt_perturb(spec, value, self.config.perturb, self.config.p_cat, &mut self.rng)
                .map_err(|e| match e {
                    PerturbError::Space(s) => OptimizerError::Space(s),
                    other => OptimizerError::InvalidConfig(format!("{other}")),
                })?;
            child.insert(spec.name(), next);
        }
        Ok(child)
    }
}

impl Optimizer for Pbt {
    fn ask(&mut self) -> Result<Asked, OptimizerError> {
        if self.handed_out {
            return Ok(Asked::default());
        }
        if self.generation >= self.generations {
            return Err(OptimizerError::Finished);
        }
        let mut asked = Asked::default();
        self.members.clear();
        self.results.clear();
        if self.generation == 0 {
            self.fresh(EventKind::Sample, &mut asked);
        } else if self.resample {
            self.resample = false;
            self.fresh(EventKind::Resample, &mut asked);
        } else {
            let budget = self.config.interval;
            let survivors = core::mem::take(&mut self.survivors);
            for parent in &survivors {
                let trial_id = self.outstanding.issue(budget);
                asked.events.push(ExplorationEvent {
                    iteration: self.generation,
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
                self.members.push(Member {
                    trial_id,
                    assignment: parent.assignment.clone(),
                });
            }
            for _ in survivors.len()..self.config.population {
                let parent = &survivors[self.rng.random_range(0..survivors.len())];
                let assignment = self.mutate(&parent.assignment)?;
                let trial_id = self.outstanding.issue(budget);
                asked.events.push(ExplorationEvent {
                    iteration: self.generation,
                    trial_id,
                    kind: EventKind::Mutate {
                        parent: parent.trial_id,
                    },
                    budget,
                });
                asked.suggestions.push(Suggestion {
                    trial_id,
                    assignment: assignment.clone(),
                    budget,
                    origin: Origin::Mutated(parent.trial_id),
                    checkpoint_source: Some(parent.trial_id),
                    from_model: false,
                });
                self.members.push(Member {
                    trial_id,
                    assignment,
                });
            }
        }
        self.handed_out = true;
        Ok(asked)
    }

    fn tell(&mut self, obs: &Observation) -> Result<Vec<ExplorationEvent>, OptimizerError> {
        self.outstanding.settle(obs)?;
        self.results.insert(obs.trial_id, obs.score());
        if self.results.len() < self.members.len() {
            return Ok(Vec::new());
        }

        let iteration = self.generation;
        let budget = self.config.interval;
        let mut ranked: Vec<(TrialId, Option<f64>)> =
            self.members.iter().map(|m| (m.trial_id, self.results[&m.trial_id])).collect();
        ranked.sort_by(|a, b| rank_order(*a, *b));
        let ok = ranked.iter().filter(|(_, y)| y.is_some()).count();
        let keep = self.config.survivors().min(ok);

        let mut events: Vec<ExplorationEvent> = self
            .members
            .iter()
            .map(|m| ExplorationEvent {
                iteration,
                trial_id: m.trial_id,
                kind: EventKind::Evaluate {
                    objective: self.results[&m.trial_id],
                },
                budget,
            })
            .collect();
        for (rank, (id, _)) in ranked.iter().enumerate() {
            events.push(ExplorationEvent {
                iteration,
                trial_id: *id,
                kind: if rank < keep {
                    EventKind::Survive
                } else {
                    EventKind::Discard
                },
                budget,
            });
        }
        self.survivors = ranked[..keep]
            .iter()
            .map(|(id, _)| {
                self.members
                    .iter()
                    .find(|m| m.trial_id == *id)
                    .expect("ranked ids are members")
                    .clone()
            })
            .collect();
        self.resample = keep == 0;
        self.generation += 1;
        self.handed_out = false;
        Ok(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Scale;
    use alloc::vec;

    fn log_spec() -> ParamSpec {
        ParamSpec::continuous("lr", 1e-5, 1e-1, Scale::Log).unwrap()
    }

    #[test]
    fn encoded_step_examples() {
        let up = perturb_encoded(&log_spec(), &1e-3.into(), 0.1, true).unwrap();
        let expected = libm::pow(10.0, -2.6);
        assert!((up.as_f64().unwrap() - expected).abs() < 1e-15);
        assert!((expected - 2.51e-3).abs() < 1e-5);

        let lin = ParamSpec::continuous("x", 0.0, 100.0, Scale::Linear).unwrap();
        let down = perturb_encoded(&lin, &50.0.into(), 0.1, false).unwrap();
        assert!((down.as_f64().unwrap() - 40.0).abs() < 1e-12);

        let top = perturb_encoded(&lin, &100.0.into(), 0.1, true).unwrap();
        assert_eq!(top, ParamValue::Num(100.0));
    }

    #[test]
    fn native_factor_refused_for_linear_and_categorical() {
        let mut rng = rng::seeded(0);
        let lin = ParamSpec::continuous("x", 0.0, 100.0, Scale::Linear).unwrap();
        let mode = PerturbMode::NativeFactor { lo: 0.8, hi: 1.2 };
        assert!(matches!(
            pbt_perturb(&lin, &50.0.into(), mode, 0.2, &mut rng),
            Err(PerturbError::ModeUnsupported(_))
        ));
        let cat = ParamSpec::categorical("c", &["a", "b"]).unwrap();
        assert!(matches!(
            pbt_perturb(&cat, &"a".into(), mode, 0.2, &mut rng),
            Err(PerturbError::ModeUnsupported(_))
        ));
        let v = pbt_perturb(&log_spec(), &1e-3.into(), mode, 0.2, &mut rng).unwrap();
        let v = v.as_f64().unwrap();
        assert!((v - 1.2e-3).abs() < 1e-12 || (v - 0.8e-3).abs() < 1e-12);
    }

    #[test]
    fn categorical_resample_always_changes_label_when_p_is_one() {
        let mut rng = rng::seeded(3);
        let cat = ParamSpec::categorical("c", &["a", "b", "c"]).unwrap();
        for _ in 0..100 {
            let v = pbt_perturb(&cat, &"b".into(), PerturbMode::default(), 1.0, &mut rng).unwrap();
            assert_ne!(v, ParamValue::from("b"));
            let kept = pbt_perturb(&cat, &"b".into(), PerturbMode::default(), 0.0, &mut rng).unwrap();
            assert_eq!(kept, ParamValue::from("b"));
        }
    }

    fn space() -> SearchSpace {
        SearchSpace::new(vec![
            ParamSpec::continuous("x", 0.0, 1.0, Scale::Linear).unwrap()
        ])
        .unwrap()
    }

    #[test]
    fn generation_one_has_survivors_and_mutants() {
        let mut pbt = Pbt::new(PbtConfig::new(4, 1, 0.5, 3), space(), 1000, 9).unwrap();
        let gen0 = pbt.ask().unwrap().suggestions;
        assert_eq!(gen0.len(), 4);
        let mut events = Vec::new();
        for (s, y) in gen0.iter().zip([0.2, 0.4, 0.6, 0.8]) {
            events.extend(pbt.tell(&Observation::ok(s.trial_id, y, 1)).unwrap());
        }
        let survivors: Vec<TrialId> = events
            .iter()
            .filter(|e| e.kind == EventKind::Survive)
            .map(|e| e.trial_id)
            .collect();
        assert_eq!(survivors, vec![gen0[3].trial_id, gen0[2].trial_id]);
        assert_eq!(events.iter().filter(|e| e.kind == EventKind::Discard).count(), 2);

        let gen1 = pbt.ask().unwrap().suggestions;
        assert_eq!(gen1.len(), 4);
        let promoted = gen1.iter().filter(|s| matches!(s.origin, Origin::Promoted(_))).count();
        let mutated = gen1.iter().filter(|s| matches!(s.origin, Origin::Mutated(_))).count();
        assert_eq!((promoted, mutated), (2, 2));
        for s in &gen1 {
            assert!(survivors.contains(&s.checkpoint_source.unwrap()));
        }
    }

    #[test]
    fn fully_failed_generation_resamples() {
        let mut pbt = Pbt::new(PbtConfig::new(4, 1, 0.5, 3), space(), 1000, 9).unwrap();
        for s in pbt.ask().unwrap().suggestions {
            pbt.tell(&Observation::failed(s.trial_id, 0)).unwrap();
        }
        let next = pbt.ask().unwrap();
        assert_eq!(next.suggestions.len(), 4);
        assert!(next.suggestions.iter().all(|s| s.origin == Origin::Sampled));
        assert_eq!(
            next.events.iter().filter(|e| e.kind == EventKind::Resample).count(),
            4
        );
    }

    #[test]
    fn stops_after_g_generations() {
        let mut pbt = Pbt::new(PbtConfig::new(2, 1, 0.5, 2), space(), 1000, 1).unwrap();
        for _ in 0..2 {
            for s in pbt.ask().unwrap().suggestions {
                let y = s.assignment.num("x").unwrap();
                pbt.tell(&Observation::ok(s.trial_id, y, 1)).unwrap();
            }
        }
        assert_eq!(pbt.ask(), Err(OptimizerError::Finished));
    }

    #[test]
    fn native_factor_rejected_for_linear_space() {
        let cfg = PbtConfig {
            perturb: PerturbMode::NativeFactor { lo: 0.8, hi: 1.2 },
            ..PbtConfig::new(4, 1, 0.5, 2)
        };
        assert!(Pbt::new(cfg, space(), 100, 0).is_err());
    }
}
