// SPDX-License-Identifier: Apache-2.0

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Asked, Observation, Optimizer, OptimizerError, Origin, Outstanding, Suggestion};
use crate::event::{EventKind, ExplorationEvent};
use crate::rng::{self, DefaultRng};
use crate::space::SearchSpace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomConfig {
    /// Budget units given to every trial.
    #[serde(default = "one")]
    pub trial_budget: u64,
}

fn one() -> u64 {
    1
}

impl Default for RandomConfig {
    fn default() -> Self {
        RandomConfig { trial_budget: 1 }
    }
}

/// Independent uniform sampling in encoded space, one trial per ask.
pub struct RandomSearch {
    space: SearchSpace,
    trial_budget: u64,
    max_trials: u64,
    asked: u64,
    rng: DefaultRng,
    outstanding: Outstanding,
}

impl RandomSearch {
    pub fn new(config: RandomConfig, space: SearchSpace, total_budget: u64, seed: u64) -> Self {
        RandomSearch {
            space,
            trial_budget: config.trial_budget,
            max_trials: total_budget / config.trial_budget,
            asked: 0,
            rng: rng::seeded(seed),
            outstanding: Outstanding::default(),
        }
    }
}

impl Optimizer for RandomSearch {
    fn ask(&mut self) -> Result<Asked, OptimizerError> {
        if self.asked >= self.max_trials {
            return if self.outstanding.pending_count() == 0 {
                Err(OptimizerError::Finished)
            } else {
                Ok(Asked::default())
            };
        }
        let assignment = self.space.sample_with(&mut self.rng);
        let trial_id = self.outstanding.issue(self.trial_budget);
        let iteration = self.asked;
        self.asked += 1;
        Ok(Asked {
            suggestions: vec![Suggestion {
                trial_id,
                assignment,
                budget: self.trial_budget,
                origin: Origin::Sampled,
                checkpoint_source: None,
                from_model: false,
            }],
            events: vec![ExplorationEvent {
                iteration,
                trial_id,
                kind: EventKind::Sample,
                budget: self.trial_budget,
            }],
        })
    }

    fn tell(&mut self, obs: &Observation) -> Result<Vec<ExplorationEvent>, OptimizerError> {
        self.outstanding.settle(obs)?;
        Ok(vec![ExplorationEvent {
            iteration: obs.trial_id.0,
            trial_id: obs.trial_id,
            kind: EventKind::Evaluate {
                objective: obs.score(),
            },
            budget: obs.budget_consumed,
        }])
    }
}
