// SPDX-License-Identifier: Apache-2.0

//! Tree-structured Parzen estimator.
//!
//! History is split at the `gamma` quantile into a good set and the rest.
//! Each encoded dimension gets two independent densities, `l` (good) and `g`
//! (rest); candidates are drawn from `l` and the one maximizing `l / g`
//! (summed in log space over dimensions) wins.
//!
//! Numeric dimensions use Gaussian kernels truncated to `[0, 1]` with the
//! normal-reference bandwidth, mixed with one uniform prior component so `g`
//! never vanishes. Categorical dimensions use add-one smoothed frequencies.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Asked, Observation, Optimizer, OptimizerError, Origin, Outstanding, Suggestion};
use crate::event::{EventKind, ExplorationEvent};
use crate::rng::{self, DefaultRng};
use crate::space::{ParamAssignment, ParamSpec, SearchSpace, SpaceError};

/// Kernel bandwidth floor for `n` centers: `1 / min(n + 1, 100)` in encoded
/// units, so tight clusters of few points still leave room to explore.
fn min_bandwidth(n: usize) -> f64 {
    1.0 / (n + 1).min(100) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_candidates")]
    pub n_candidates: usize,
    #[serde(default = "default_startup")]
    pub n_startup: usize,
    #[serde(default = "default_trial_budget")]
    pub trial_budget: u64,
}

fn default_gamma() -> f64 {
    0.25
}
fn default_candidates() -> usize {
    24
}
fn default_startup() -> usize {
    10
}
fn default_trial_budget() -> u64 {
    1
}

impl Default for TpeConfig {
    fn default() -> Self {
        TpeConfig {
            gamma: default_gamma(),
            n_candidates: default_candidates(),
            n_startup: default_startup(),
            trial_budget: default_trial_budget(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TpeError {
    #[error("all observed objectives are identical")]
    DegenerateHistory,
    #[error("history is empty")]
    EmptyHistory,
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Number of observations in the good set.
pub fn good_count(n: usize, gamma: f64) -> usize {
    (libm::floor(gamma * n as f64) as usize).max(1)
}

fn phi_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

enum Density {
    Numeric { centers: Vec<f64>, bandwidth: f64 },
    Categorical { probs: Vec<f64> },
}

impl Density {
    fn fit(spec: &ParamSpec, values: &[f64]) -> Density {
        match spec.cardinality() {
            Some(k) => {
                let mut counts = vec![1.0; k];
                for &u in values {
                    counts[spec.category_index(u)] += 1.0;
                }
                let total = (values.len() + k) as f64;
                Density::Categorical {
                    probs: counts.into_iter().map(|c| c / total).collect(),
                }
            }
            None => {
                let n = values.len();
                let bandwidth = if n < 2 {
                    1.0
                } else {
                    let mean = values.iter().sum::<f64>() / n as f64;
                    let var =
                        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
                    1.06 * libm::sqrt(var) * libm::pow(n as f64, -0.2)
                };
                Density::Numeric {
                    centers: values.to_vec(),
                    bandwidth: bandwidth.clamp(min_bandwidth(n), 1.0),
                }
            }
        }
    }

    fn pdf(&self, spec: &ParamSpec, u: f64) -> f64 {
        match self {
            Density::Categorical { probs } => probs[spec.category_index(u)],
            Density::Numeric { centers, bandwidth } => {
                let h = *bandwidth;
                let weight = 1.0 / (centers.len() + 1) as f64;
                let mut density = weight;
                for &c in centers {
                    let mass = phi_cdf((1.0 - c) / h) - phi_cdf(-c / h);
                    let z = (u - c) / h;
                    let pdf = libm::exp(-0.5 * z * z)
                        / (h * libm::sqrt(2.0 * core::f64::consts::PI));
                    density += weight * pdf / mass.max(1e-300);
                }
                density
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Density::Categorical { probs } => {
                let mut x = rng.random::<f64>();
                let k = probs.len();
                for (j, p) in probs.iter().enumerate() {
                    if x < *p {
                        return (j as f64 + 0.5) / k as f64;
                    }
                    x -= p;
                }
                (k as f64 - 0.5) / k as f64
            }
            Density::Numeric { centers, bandwidth } => {
                let pick = rng.random_range(0..=centers.len());
                if pick == centers.len() {
                    return rng.random::<f64>();
                }
                let c = centers[pick];
                for _ in 0..64 {
                    let x = c + bandwidth * rng::standard_normal(rng);
                    if (0.0..=1.0).contains(&x) {
                        return x;
                    }
                }
                c.clamp(0.0, 1.0)
            }
        }
    }
}

/// TPE over already-encoded history. Returns the winning encoded point.
pub fn tpe_suggest_encoded<R: Rng + ?Sized>(
    history: &[(Vec<f64>, f64)],
    space: &SearchSpace,
    config: &TpeConfig,
    rng: &mut R,
) -> Result<Vec<f64>, TpeError> {
    if history.is_empty() {
        return Err(TpeError::EmptyHistory);
    }
    let first = history[0].1;
    if history.iter().all(|(_, y)| *y == first) {
        return Err(TpeError::DegenerateHistory);
    }
    let mut order: Vec<usize> = (0..history.len()).collect();
    order.sort_by(|&a, &b| {
        history[b]
            .1
            .partial_cmp(&history[a].1)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let n_good = good_count(history.len(), config.gamma);
    let (good, bad) = order.split_at(n_good);

    let models: Vec<(Density, Density)> = space
        .params()
        .iter()
        .enumerate()
        .map(|(d, spec)| {
            let column = |idx: &[usize]| idx.iter().map(|&i| history[i].0[d]).collect::<Vec<_>>();
            (Density::fit(spec, &column(good)), Density::fit(spec, &column(bad)))
        })
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..config.n_candidates.max(1) {
        let candidate: Vec<f64> = models.iter().map(|(l, _)| l.sample(rng)).collect();
        let score: f64 = space
            .params()
            .iter()
            .zip(&models)
            .zip(&candidate)
            .map(|((spec, (l, g)), &u)| libm::log(l.pdf(spec, u)) - libm::log(g.pdf(spec, u)))
            .sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, candidate));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

/// TPE over native assignments; `objective` is higher-is-better.
pub fn tpe_suggest(
    history: &[(ParamAssignment, f64)],
    space: &SearchSpace,
    config: &TpeConfig,
    seed: u64,
) -> Result<ParamAssignment, TpeError> {
    let encoded = history
        .iter()
        .map(|(a, y)| Ok((space.encode(a)?, *y)))
        .collect::<Result<Vec<_>, SpaceError>>()?;
    let point = tpe_suggest_encoded(&encoded, space, config, &mut rng::seeded(seed))?;
    Ok(space.decode(&point))
}

/// Sequential model-based optimizer: random for the first `n_startup` trials,
/// TPE afterwards.
pub struct Tpe {
    space: SearchSpace,
    config: TpeConfig,
    max_trials: u64,
    asked: u64,
    history: Vec<(Vec<f64>, f64)>,
    encoded: alloc::collections::BTreeMap<super::TrialId, Vec<f64>>,
    rng: DefaultRng,
    outstanding: Outstanding,
}

impl Tpe {
    pub fn new(config: TpeConfig, space: SearchSpace, total_budget: u64, seed: u64) -> Self {
        Tpe {
            space,
            config,
            max_trials: total_budget / config.trial_budget.max(1),
            asked: 0,
            history: Vec::new(),
            encoded: Default::default(),
            rng: rng::seeded(seed),
            outstanding: Outstanding::default(),
        }
    }
}

impl Optimizer for Tpe {
    fn ask(&mut self) -> Result<Asked, OptimizerError> {
        if self.asked >= self.max_trials {
            return if self.outstanding.pending_count() == 0 {
                Err(OptimizerError::Finished)
            } else {
                Ok(Asked::default())
            };
        }
        let iteration = self.asked;
        let budget = self.config.trial_budget;
        let mut events = Vec::new();
        let mut from_model = false;
        let point = if self.history.len() < self.config.n_startup.max(1) {
            None
        } else {
            match tpe_suggest_encoded(&self.history, &self.space, &self.config, &mut self.rng) {
                Ok(p) => {
                    from_model = true;
                    Some(p)
                }
                Err(e) => {
                    events.push(EventKind::Diagnostic {
                        message: alloc::format!("{e}; falling back to random sampling"),
                    });
                    None
                }
            }
        };
        let assignment = match point {
            Some(p) => self.space.decode(&p),
            None => self.space.sample_with(&mut self.rng),
        };
        let trial_id = self.outstanding.issue(budget);
        self.encoded.insert(trial_id, self.space.encode(&assignment)?);
        self.asked += 1;
        let mut out: Vec<ExplorationEvent> = events
            .into_iter()
            .map(|kind| ExplorationEvent {
                iteration,
                trial_id,
                kind,
                budget,
            })
            .collect();
        out.push(ExplorationEvent {
            iteration,
            trial_id,
            kind: EventKind::Sample,
            budget,
        });
        Ok(Asked {
            suggestions: vec![Suggestion {
                trial_id,
                assignment,
                budget,
                origin: Origin::Sampled,
                checkpoint_source: None,
                from_model,
            }],
            events: out,
        })
    }

    fn tell(&mut self, obs: &Observation) -> Result<Vec<ExplorationEvent>, OptimizerError> {
        self.outstanding.settle(obs)?;
        let point = self
            .encoded
            .remove(&obs.trial_id)
            .ok_or(OptimizerError::UnknownTrial(obs.trial_id))?;
        if let Some(score) = obs.score() {
            self.history.push((point, score));
        }
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Scale;

    fn unit_space() -> SearchSpace {
        SearchSpace::new(vec![
            ParamSpec::continuous("x", 0.0, 1.0, Scale::Linear).unwrap()
        ])
        .unwrap()
    }

    #[test]
    fn good_count_examples() {
        assert_eq!(good_count(8, 0.25), 2);
        assert_eq!(good_count(3, 0.25), 1);
        assert_eq!(good_count(1, 0.25), 1);
    }

    #[test]
    fn cold_start_matches_random_sample() {
        let space = unit_space();
        let mut opt = Tpe::new(TpeConfig::default(), space.clone(), 10, 17);
        let first = opt.ask().unwrap();
        assert!(!first.suggestions[0].from_model);
        assert_eq!(first.suggestions[0].assignment, space.sample(17));
    }

    #[test]
    fn degenerate_history_is_reported() {
        let space = unit_space();
        let history: Vec<(Vec<f64>, f64)> =
            (0..10).map(|i| (vec![i as f64 / 10.0], 1.0)).collect();
        let err = tpe_suggest_encoded(&history, &space, &TpeConfig::default(), &mut rng::seeded(0));
        assert_eq!(err, Err(TpeError::DegenerateHistory));
    }

    #[test]
    fn degenerate_history_emits_diagnostic_and_falls_back() {
        let space = unit_space();
        let cfg = TpeConfig {
            n_startup: 2,
            ..TpeConfig::default()
        };
        let mut opt = Tpe::new(cfg, space, 10, 5);
        for _ in 0..2 {
            let s = opt.ask().unwrap().suggestions.remove(0);
            opt.tell(&Observation::ok(s.trial_id, 0.3, 1)).unwrap();
        }
        let asked = opt.ask().unwrap();
        assert!(!asked.suggestions[0].from_model);
        assert!(asked
            .events
            .iter()
            .any(|e| matches!(e.kind, EventKind::Diagnostic { .. })));
    }

    #[test]
    fn categorical_densities_are_smoothed() {
        let spec = ParamSpec::categorical("c", &["a", "b", "c"]).unwrap();
        let d = Density::fit(&spec, &[0.5 / 3.0, 0.5 / 3.0]);
        assert!((d.pdf(&spec, 0.1) - 3.0 / 5.0).abs() < 1e-12);
        assert!((d.pdf(&spec, 0.9) - 1.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn numeric_density_integrates_to_one() {
        let spec = ParamSpec::continuous("x", 0.0, 1.0, Scale::Linear).unwrap();
        let d = Density::fit(&spec, &[0.0, 0.2, 0.21, 0.95]);
        let n = 20_000;
        let integral: f64 = (0..n)
            .map(|i| d.pdf(&spec, (i as f64 + 0.5) / n as f64) / n as f64)
            .sum();
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
    }
}
