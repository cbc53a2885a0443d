// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use hypertendril_core::objectives::{branin, quad_bowl};
use hypertendril_core::optimizer::{
    bohb_suggest, good_count, hyperband_schedule, pbt_perturb, perturb_encoded, tpe_suggest, BohbConfig, BudgetLevels,
    Hyperband, HyperbandConfig, PbtConfig, PerturbMode, RandomConfig, TpeConfig, TpeError,
};
use hypertendril_core::rng;
use hypertendril_core::{
    build_optimizer, EventKind, ExplorationEvent, Observation, Optimizer, OptimizerConfig, OptimizerError,
    ParamAssignment, ParamSpec, ParamValue, Scale, SearchSpace, Suggestion,
};
use statrs::distribution::{Binomial, DiscreteCDF};

struct Run {
    suggestions: Vec<Suggestion>,
    events: Vec<ExplorationEvent>,
    best: f64,
}

/// Drives an optimizer to completion, telling every batch in order.
fn drive(opt: &mut dyn Optimizer, f: impl Fn(&ParamAssignment) -> f64) -> Run {
    let mut run = Run { suggestions: Vec::new(), events: Vec::new(), best: f64::NEG_INFINITY };
    loop {
        let asked = match opt.ask() {
            Ok(a) => a,
            Err(OptimizerError::Finished) => break,
            Err(e) => panic!("{e}"),
        };
        assert!(!asked.suggestions.is_empty(), "ask stalled with nothing outstanding");
        run.events.extend(asked.events);
        for s in &asked.suggestions {
            let y = f(&s.assignment);
            run.best = run.best.max(y);
            run.events.extend(opt.tell(&Observation::ok(s.trial_id, y, s.budget)).unwrap());
        }
        run.suggestions.extend(asked.suggestions);
    }
    run
}

fn unit_space(d: usize) -> SearchSpace {
    SearchSpace::new((1..=d).map(|i| ParamSpec::continuous(&format!("x{i}"), 0.0, 1.0, Scale::Linear).unwrap()).collect()).unwrap()
}

fn xs(a: &ParamAssignment) -> Vec<f64> {
    a.values().map(|v| v.as_f64().unwrap()).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

fn table(max_budget: u64, eta: u64) -> Vec<Vec<(u64, f64)>> {
    hyperband_schedule(max_budget, eta).iter().map(|b| b.rounds.iter().map(|r| (r.n, r.r)).collect()).collect()
}

#[test]
fn hyperband_81_3_matches_hand_table() {
    let expected: Vec<Vec<(u64, f64)>> = vec![
        vec![(81, 1.0), (27, 3.0), (9, 9.0), (3, 27.0), (1, 81.0)],
        vec![(34, 3.0), (11, 9.0), (3, 27.0), (1, 81.0)],
        vec![(15, 9.0), (5, 27.0), (1, 81.0)],
        vec![(8, 27.0), (2, 81.0)],
        vec![(5, 81.0)],
    ];
    assert_eq!(table(81, 3), expected);
    let s: Vec<u32> = hyperband_schedule(81, 3).iter().map(|b| b.s).collect();
    assert_eq!(s, vec![4, 3, 2, 1, 0]);
}

#[test]
fn hyperband_small_tables() {
    assert_eq!(table(9, 3)[0], vec![(9, 1.0), (3, 3.0), (1, 9.0)]);
    assert_eq!(table(1, 3), vec![vec![(1, 1.0)]]);
}

#[test]
fn hyperband_budget_is_conserved() {
    for (r, eta) in [(9u64, 3u64), (27, 3), (16, 2)] {
        let total = Hyperband::sweep_cost(r, eta);
        let mut hb = Hyperband::hyperband(HyperbandConfig { max_budget: r, eta }, unit_space(2), total, 3);
        let run = drive(&mut hb, |a| -quad_bowl(&xs(a)));
        let spent: u64 = run.suggestions.iter().map(|s| s.budget).sum();
        assert_eq!(spent, total, "R={r} eta={eta}");
        let deepest = run
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Evaluate { .. }))
            .map(|e| e.budget)
            .max();
        assert_eq!(deepest, Some(r));
        let schedule = hyperband_schedule(r, eta);
        let trials: u64 = schedule.iter().flat_map(|b| b.rounds.iter().map(|x| x.n)).sum();
        assert_eq!(run.suggestions.len() as u64, trials);
    }
}

#[test]
fn pbt_survivor_counts_every_generation() {
    let cfg = PbtConfig::new(8, 1, 0.5, 10);
    assert_eq!(cfg.survivors(), 4);
    assert_eq!(PbtConfig::new(5, 1, 0.2, 1).survivors(), 1);
    assert_eq!(PbtConfig::new(3, 1, 0.1, 1).survivors(), 1);
    let mut pbt = build_optimizer(&OptimizerConfig::Pbt(cfg), &unit_space(2), 80, 1).unwrap();
    let run = drive(pbt.as_mut(), |a| -quad_bowl(&xs(a)));
    assert_eq!(run.suggestions.len(), 80);
    for g in 0..10 {
        let count = |k: &EventKind| run.events.iter().filter(|e| e.iteration == g && &e.kind == k).count();
        assert_eq!(count(&EventKind::Survive), 4, "generation {g}");
        assert_eq!(count(&EventKind::Discard), 4, "generation {g}");
    }
}

#[test]
fn pbt_quad_bowl_median_reaches_optimum() {
    let bests: Vec<f64> = (0..20)
        .map(|seed| {
            let mut pbt = build_optimizer(&OptimizerConfig::Pbt(PbtConfig::new(8, 1, 0.5, 10)), &unit_space(2), 80, seed).unwrap();
            -drive(pbt.as_mut(), |a| -quad_bowl(&xs(a))).best
        })
        .collect();
    assert!(median(bests.clone()) <= 0.05, "{bests:?}");
}

#[test]
fn encoded_step_is_scale_invariant() {
    let spec = ParamSpec::continuous("lr", 1e-5, 1e-1, Scale::Log).unwrap();
    for v in [1e-4, 1e-3, 1e-2] {
        let before = spec.encode(&ParamValue::Num(v)).unwrap();
        for up in [true, false] {
            let moved = perturb_encoded(&spec, &ParamValue::Num(v), 0.1, up).unwrap();
            let delta = spec.encode(&moved).unwrap() - before;
            assert!((delta.abs() - 0.1).abs() < 1e-12, "v={v} up={up} delta={delta}");
        }
    }
    let up = perturb_encoded(&spec, &ParamValue::Num(1e-3), 0.1, true).unwrap().as_f64().unwrap();
    assert!((up - 10f64.powf(-2.6)).abs() < 1e-12 && (up - 2.51e-3).abs() < 1e-5, "{up}");
    let edge = perturb_encoded(&spec, &ParamValue::Num(1e-1), 0.1, true).unwrap();
    assert_eq!(edge.as_f64(), Some(1e-1));
}

#[test]
fn categorical_perturbation_changes_label_at_rate() {
    let spec = ParamSpec::categorical("act", &["relu", "tanh", "gelu"]).unwrap();
    let mut g = rng::seeded(4);
    let n = 10_000;
    let changed = (0..n)
        .filter(|_| {
            let v = pbt_perturb(&spec, &"relu".into(), PerturbMode::default(), 0.2, &mut g).unwrap();
            v.as_label() != Some("relu")
        })
        .count();
    assert!((changed as f64 / n as f64 - 0.2).abs() < 0.02, "{changed}");
}

#[test]
fn tpe_concentrates_near_good_region() {
    let space = unit_space(1);
    let history: Vec<(ParamAssignment, f64)> = (0..40)
        .map(|i| {
            let x = (i as f64 + 0.5) / 40.0;
            let mut a = ParamAssignment::new();
            a.insert("x1", x);
            (a, -(x - 0.8).abs())
        })
        .collect();
    let n = 200;
    let hits = (0..n)
        .filter(|&seed| {
            let x = tpe_suggest(&history, &space, &TpeConfig::default(), seed).unwrap().num("x1").unwrap();
            (0.7..=0.9).contains(&x)
        })
        .count() as u64;
    let p = Binomial::new(0.2, n).unwrap().sf(hits - 1);
    assert!(p < 0.01, "hits={hits} p={p}");
}

#[test]
fn tpe_degenerate_history_falls_back_to_uniform() {
    let space = unit_space(1);
    let flat: Vec<(ParamAssignment, f64)> = (0..10).map(|i| (space.sample(i), 1.0)).collect();
    assert_eq!(tpe_suggest(&flat, &space, &TpeConfig::default(), 0), Err(TpeError::DegenerateHistory));
    assert_eq!(tpe_suggest(&[], &space, &TpeConfig::default(), 0), Err(TpeError::EmptyHistory));

    let mut tpe = build_optimizer(&OptimizerConfig::Tpe(TpeConfig::default()), &space, 400, 9).unwrap();
    let run = drive(tpe.as_mut(), |_| 0.0);
    let mut u: Vec<f64> = run.suggestions[10..].iter().map(|s| s.assignment.num("x1").unwrap()).collect();
    assert!(run.suggestions.iter().all(|s| !s.from_model));
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max);
    assert!(d < 1.628 / n.sqrt(), "KS {d}");
}

#[test]
fn good_count_follows_gamma() {
    assert_eq!(good_count(1, 0.25), 1);
    assert_eq!(good_count(4, 0.25), 1);
    assert_eq!(good_count(40, 0.25), 10);
}

#[test]
fn tpe_beats_random_on_branin() {
    let space = SearchSpace::new(vec![
        ParamSpec::continuous("x1", -5.0, 10.0, Scale::Linear).unwrap(),
        ParamSpec::continuous("x2", 0.0, 15.0, Scale::Linear).unwrap(),
    ])
    .unwrap();
    let f = |a: &ParamAssignment| -branin(a.num("x1").unwrap(), a.num("x2").unwrap());
    let mut wins = 0;
    for seed in 0..20 {
        let mut tpe = build_optimizer(&OptimizerConfig::Tpe(TpeConfig::default()), &space, 50, seed).unwrap();
        let mut rnd = build_optimizer(&OptimizerConfig::Random(RandomConfig::default()), &space, 50, seed).unwrap();
        let (a, b) = (drive(tpe.as_mut(), f).best, drive(rnd.as_mut(), f).best);
        if a > b {
            wins += 1;
        }
    }
    assert!(wins >= 15, "TPE won {wins}/20");
}

fn level(n: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
    let mut g = rng::seeded(seed);
    (0..n)
        .map(|_| {
            let p: Vec<f64> = (0..3).map(|_| rand::Rng::random::<f64>(&mut g)).collect();
            let y = -quad_bowl(&p);
            (p, y)
        })
        .collect()
}

#[test]
fn bohb_gating_and_random_fraction() {
    let space = unit_space(3);
    let cfg = BohbConfig::new(9, 3);
    assert_eq!(cfg.min_points(3), 5);
    let mut g = rng::seeded(0);
    let mut sparse: BudgetLevels = BTreeMap::new();
    sparse.insert(1, level(4, 1));
    sparse.insert(3, level(4, 2));
    for _ in 0..500 {
        assert!(!bohb_suggest(&sparse, &space, &cfg, &mut g).1);
    }
    let mut dense = sparse.clone();
    dense.insert(1, level(5, 3));
    let n = 3000;
    let model = (0..n).filter(|_| bohb_suggest(&dense, &space, &cfg, &mut g).1).count();
    let random = 1.0 - model as f64 / n as f64;
    assert!((random - 1.0 / 3.0).abs() < 0.03, "random fraction {random}");
}

#[test]
fn bohb_optimizer_marks_early_suggestions_random() {
    let space = unit_space(3);
    let total = Hyperband::sweep_cost(9, 3) * 3;
    let mut bohb = build_optimizer(&OptimizerConfig::Bohb(BohbConfig::new(9, 3)), &space, total, 2).unwrap();
    let run = drive(bohb.as_mut(), |a| -quad_bowl(&xs(a)));
    let first_round = hyperband_schedule(9, 3)[0].rounds[0].n as usize;
    assert!(run.suggestions[..first_round].iter().all(|s| !s.from_model));
    assert!(run.suggestions.iter().any(|s| s.from_model));
}

#[test]
fn every_variant_is_deterministic() {
    let space = unit_space(2);
    let configs = [
        OptimizerConfig::Random(RandomConfig::default()),
        OptimizerConfig::Tpe(TpeConfig::default()),
        OptimizerConfig::Hyperband(HyperbandConfig { max_budget: 9, eta: 3 }),
        OptimizerConfig::Bohb(BohbConfig::new(9, 3)),
        OptimizerConfig::Pbt(PbtConfig::new(4, 1, 0.5, 4)),
    ];
    for cfg in &configs {
        let once = |seed| {
            let mut o = build_optimizer(cfg, &space, 60, seed).unwrap();
            let run = drive(o.as_mut(), |a| -quad_bowl(&xs(a)));
            (run.suggestions, run.events)
        };
        assert_eq!(once(17), once(17), "{}", cfg.name());
        assert_ne!(once(17).0, once(18).0, "{}", cfg.name());
    }
}
