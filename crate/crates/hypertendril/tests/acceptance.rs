// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use common::{check_process, config, median, temp_store, unit_space};
use http_body_util::BodyExt;
use hypertendril::api::router;
use hypertendril::query::Service;
use hypertendril::runner::{drive, DriveOptions, RunnerError};
use hypertendril::store::{ProcessStatus, Store};
use hypertendril_core::importance::{
    decompose_tree, fit_forest_encoded, tree_marginal, variance_fractions, ForestConfig, Leaf, Tree,
};
use hypertendril_core::optimizer::{
    bohb_suggest, hyperband_schedule, perturb_encoded, BohbConfig, BudgetLevels, PbtConfig, RandomConfig, TpeConfig,
};
use hypertendril_core::pareto::{dominates, pareto_front, Direction};
use hypertendril_core::reservoir::Reservoir;
use hypertendril_core::{rng, EventKind, OptimizerConfig, ParamSpec, ParamValue, Scale, SearchSpace};
use rand::Rng;
use serde_json::{json, Value};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};
use tower::ServiceExt;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg()) }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed < Duration::from_secs(limit_s), || format!("took {elapsed:.1?}, limit {limit_s}s"))
}

fn hyperband_table() -> Outcome {
    let t0 = Instant::now();
    let hand: [&[(u64, f64)]; 5] = [
        &[(81, 1.0), (27, 3.0), (9, 9.0), (3, 27.0), (1, 81.0)],
        &[(34, 3.0), (11, 9.0), (3, 27.0), (1, 81.0)],
        &[(15, 9.0), (5, 27.0), (1, 81.0)],
        &[(8, 27.0), (2, 81.0)],
        &[(5, 81.0)],
    ];
    let schedule = hyperband_schedule(81, 3);
    ensure(schedule.len() == 5, || format!("{} brackets", schedule.len()))?;
    for (b, expected) in schedule.iter().zip(hand) {
        let got: Vec<(u64, f64)> = b.rounds.iter().map(|r| (r.n, r.r)).collect();
        ensure(got == expected, || format!("bracket s={}: {got:?}", b.s))?;
        let (n, r) = (b.rounds[0].n, b.rounds[0].r);
        for (i, round) in b.rounds.iter().enumerate() {
            let eta_i = 3u64.pow(i as u32);
            ensure(round.n == n / eta_i && round.r == r * eta_i as f64, || format!("bracket s={} round {i}", b.s))?;
        }
    }
    within(t0.elapsed(), 1)?;
    Ok(format!("5 brackets match the hand table in {:.1?}", t0.elapsed()))
}

fn sample_points(n: usize, d: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut g = rng::seeded(seed);
    let points: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| g.random::<f64>()).collect()).collect();
    let targets = points.iter().map(|p| f(p)).collect();
    (points, targets)
}

fn random_tree<R: Rng>(dims: usize, splits: usize, g: &mut R) -> Tree {
    let mut cells = vec![(vec![0.0; dims], vec![1.0; dims])];
    for _ in 0..splits {
        let (lo, hi) = cells.swap_remove(g.random_range(0..cells.len()));
        let d = g.random_range(0..dims);
        let t = lo[d] + (hi[d] - lo[d]) * g.random_range(0.1..0.9);
        let (mut left_hi, mut right_lo) = (hi.clone(), lo.clone());
        left_hi[d] = t;
        right_lo[d] = t;
        cells.push((lo, left_hi));
        cells.push((right_lo, hi));
    }
    Tree::from_leaves(cells.into_iter().map(|(lower, upper)| Leaf { lower, upper, value: g.random_range(-1.0..1.0) }).collect())
}

fn fanova_oracle() -> Outcome {
    let t0 = Instant::now();
    let space = unit_space(&["x1", "x2"]);
    let cards = [None, None];
    let (p, y) = sample_points(1000, 2, 1, |x| x[0] * x[1]);
    let forest = fit_forest_encoded(&p, &y, &cards, ForestConfig::default(), 2).map_err(|e| e.to_string())?;
    let rep = variance_fractions(&forest, &space, true, 6);
    let f = |names: &[&str]| rep.fraction(names).unwrap_or(f64::NAN);
    let (f1, f2, f12) = (f(&["x1"]), f(&["x2"]), f(&["x1", "x2"]));
    for (got, want) in [(f1, 3.0 / 7.0), (f2, 3.0 / 7.0), (f12, 1.0 / 7.0)] {
        ensure((got - want).abs() <= 0.08, || format!("fractions {f1:.3}/{f2:.3}/{f12:.3}"))?;
    }
    let (p, y) = sample_points(1000, 2, 3, |x| x[0]);
    let forest = fit_forest_encoded(&p, &y, &cards, ForestConfig::default(), 4).map_err(|e| e.to_string())?;
    let rep = variance_fractions(&forest, &space, true, 6);
    let (g1, g2) = (rep.fraction(&["x1"]).unwrap_or(0.0), rep.fraction(&["x2"]).unwrap_or(1.0));
    ensure(g1 >= 0.9 && g2 <= 0.05, || format!("x1-only fractions {g1:.3}/{g2:.3}"))?;
    let mut g = rng::seeded(5);
    let trees = forest.trees.iter().cloned().chain((0..50).map(|_| {
        let splits = g.random_range(1..60);
        random_tree(2, splits, &mut g)
    }));
    let mut worst: f64 = 0.0;
    for t in trees {
        let d = decompose_tree(&t, &[(0, 1)]);
        let rel = (d.singles[0] + d.singles[1] + d.pairs[0].2 - d.total).abs() / d.total.max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    ensure(worst <= 1e-9, || format!("additivity error {worst:e}"))?;
    within(t0.elapsed(), 30)?;
    Ok(format!("x1*x2 fractions {f1:.3}/{f2:.3}/{f12:.3}; x1-only {g1:.3}/{g2:.3}; additivity {worst:.1e}; {:.1?}", t0.elapsed()))
}

fn marginal_exactness() -> Outcome {
    let mut g = rng::seeded(21);
    let n = 1_000_000;
    let mut worst_z: f64 = 0.0;
    for i in 0..50 {
        let dims = g.random_range(1..5);
        let splits = g.random_range(1..30);
        let t = random_tree(dims, splits, &mut g);
        let exact = tree_marginal(&t, &[], &[]);
        let mut x = vec![0.0; dims];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            x.iter_mut().for_each(|v| *v = g.random::<f64>());
            let y = t.predict(&x);
            s += y;
            s2 += y * y;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt().max(1e-12);
        let z = (mean - exact).abs() / se;
        ensure(z <= 3.0, || format!("tree {i}: |z| = {z:.2}"))?;
        worst_z = worst_z.max(z);
    }
    Ok(format!("50 trees, max |z| = {worst_z:.2}"))
}

fn run_process(store: &Store, cfg: &hypertendril::config::ProcessConfig) -> Result<String, String> {
    let study = store.create_study("acceptance").map_err(|e| e.to_string())?;
    let pid = store.create_process(&study.id, cfg).map_err(|e| e.to_string())?;
    match drive(store, &pid, DriveOptions::default()) {
        Ok(ProcessStatus::Finished) => Ok(pid),
        other => Err(format!("{pid}: {other:?}")),
    }
}

fn best_of(store: &Store, pid: &str, direction: Direction) -> Result<f64, String> {
    let state = store.load_state(pid).map_err(|e| e.to_string())?;
    state
        .trials
        .values()
        .filter_map(|t| t.objective)
        .reduce(|a, b| if direction.better(b, a) { b } else { a })
        .ok_or_else(|| format!("{pid}: no finished trials"))
}

fn pbt_correctness() -> Outcome {
    let t0 = Instant::now();
    let (_d, store) = temp_store();
    let mut bests = Vec::new();
    for seed in 0..20 {
        let pbt = OptimizerConfig::Pbt(PbtConfig::new(8, 1, 0.5, 10));
        let cfg = config("quad_bowl", Direction::Minimize, unit_space(&["x1", "x2"]), pbt, 80, seed);
        let pid = run_process(&store, &cfg)?;
        let state = check_process(&store, &pid)?;
        for g in 0..10 {
            let count = |k: EventKind| state.events.iter().filter(|e| e.event.iteration == g && e.event.kind == k).count();
            let (s, d) = (count(EventKind::Survive), count(EventKind::Discard));
            ensure(s == 4 && d == 4, || format!("seed {seed} generation {g}: {s} survive, {d} discard"))?;
        }
        bests.push(best_of(&store, &pid, Direction::Minimize)?);
    }
    let med = median(bests);
    ensure(med.abs() <= 0.05, || format!("median best {med:.4}"))?;
    let spec = ParamSpec::continuous("lr", 1e-5, 1e-1, Scale::Log).map_err(|e| e.to_string())?;
    for v in [1e-4, 1e-3, 1e-2] {
        let u = spec.encode(&ParamValue::Num(v)).map_err(|e| e.to_string())?;
        for up in [true, false] {
            let moved = perturb_encoded(&spec, &ParamValue::Num(v), 0.1, up).map_err(|e| e.to_string())?;
            let delta = (spec.encode(&moved).map_err(|e| e.to_string())? - u).abs();
            ensure((delta - 0.1).abs() < 1e-12, || format!("v={v}: |delta| = {delta}"))?;
        }
    }
    within(t0.elapsed(), 60)?;
    Ok(format!("median best {med:.5} over 20 seeds; 4/4 split every generation; |delta| = 0.1; {:.1?}", t0.elapsed()))
}

fn tpe_vs_random() -> Outcome {
    let t0 = Instant::now();
    let (_d, store) = temp_store();
    let space = SearchSpace::new(vec![
        ParamSpec::continuous("x1", -5.0, 10.0, Scale::Linear).map_err(|e| e.to_string())?,
        ParamSpec::continuous("x2", 0.0, 15.0, Scale::Linear).map_err(|e| e.to_string())?,
    ])
    .map_err(|e| e.to_string())?;
    let (mut tpe, mut rnd) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        for (algo, out) in [
            (OptimizerConfig::Tpe(TpeConfig::default()), &mut tpe),
            (OptimizerConfig::Random(RandomConfig::default()), &mut rnd),
        ] {
            let pid = run_process(&store, &config("branin", Direction::Minimize, space.clone(), algo, 50, seed))?;
            out.push(best_of(&store, &pid, Direction::Minimize)?);
        }
    }
    let wins = tpe.iter().zip(&rnd).filter(|(a, b)| a < b).count() as u64;
    let losses = tpe.iter().zip(&rnd).filter(|(a, b)| a > b).count() as u64;
    let n = wins + losses;
    let p = if wins == 0 { 1.0 } else { Binomial::new(0.5, n).map_err(|e| e.to_string())?.sf(wins - 1) };
    let (mt, mr) = (median(tpe), median(rnd));
    ensure(mt < mr && p < 0.05, || format!("medians {mt:.4} vs {mr:.4}, {wins}/{n} wins, p = {p:.4}"))?;
    within(t0.elapsed(), 120)?;
    Ok(format!("median best TPE {mt:.4} vs random {mr:.4}; {wins}/{n} wins, sign test p = {p:.2e}; {:.1?}", t0.elapsed()))
}

fn bohb_gating() -> Outcome {
    let space = unit_space(&["x1", "x2", "x3"]);
    let cfg = BohbConfig::new(9, 3);
    ensure(cfg.min_points(3) == 5, || format!("threshold {}", cfg.min_points(3)))?;
    let mut g = rng::seeded(0);
    let level = |n: usize, g: &mut rng::DefaultRng| -> Vec<(Vec<f64>, f64)> {
        (0..n)
            .map(|_| {
                let p: Vec<f64> = (0..3).map(|_| g.random::<f64>()).collect();
                let y = -p.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>();
                (p, y)
            })
            .collect()
    };
    let mut levels: BudgetLevels = BTreeMap::new();
    levels.insert(1, level(4, &mut g));
    levels.insert(3, level(4, &mut g));
    let sparse_model = (0..1000).filter(|_| bohb_suggest(&levels, &space, &cfg, &mut g).1).count();
    ensure(sparse_model == 0, || format!("{sparse_model} model suggestions below threshold"))?;
    levels.insert(3, level(5, &mut g));
    let dense_model = (0..1000).filter(|_| bohb_suggest(&levels, &space, &cfg, &mut g).1).count();
    ensure(dense_model > 0, || "no model suggestions at threshold".into())?;

    let (_d, store) = temp_store();
    let algo = OptimizerConfig::Bohb(cfg);
    let pid = run_process(&store, &config("quad_bowl", Direction::Minimize, space, algo, 69 * 3, 1))?;
    let state = check_process(&store, &pid)?;
    let first_model = state.trials.values().position(|t| t.from_model);
    ensure(first_model.is_some_and(|i| i >= 9), || format!("first model suggestion at {first_model:?}"))?;
    Ok(format!(
        "0/1000 model draws below threshold, {dense_model}/1000 at threshold; driven run first model trial #{}",
        first_model.unwrap_or(0)
    ))
}

fn reservoir_uniformity() -> Outcome {
    let (k, n, reps) = (10usize, 100u64, 10_000);
    let mut g = rng::seeded(1);
    let mut counts = vec![0u64; n as usize];
    for _ in 0..reps {
        let mut r = Reservoir::new(k).map_err(|e| e.to_string())?;
        for s in 0..n {
            r.append(s, s as f64, &mut g).map_err(|e| e.to_string())?;
        }
        for (s, _) in r.view() {
            counts[s as usize] += 1;
        }
    }
    let e = reps as f64 * k as f64 / n as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let critical = ChiSquared::new((n - 1) as f64).map_err(|e| e.to_string())?.inverse_cdf(0.99);
    ensure(chi2 < critical, || format!("chi2 {chi2:.1} >= {critical:.1}"))?;
    for len in [0u64, 5, 10] {
        let mut r = Reservoir::new(k).map_err(|e| e.to_string())?;
        for s in 0..len {
            r.append(s, s as f64, &mut g).map_err(|e| e.to_string())?;
        }
        ensure(r.view() == (0..len).map(|s| (s, s as f64)).collect::<Vec<_>>(), || format!("stream of {len} altered"))?;
    }
    Ok(format!("chi2 = {chi2:.1} < {critical:.1} (df 99, alpha 0.01); short streams intact"))
}

fn pareto_oracle() -> Outcome {
    let mut g = rng::seeded(8);
    let dirs = [Direction::Maximize, Direction::Minimize];
    for i in 0..100 {
        let pts: Vec<(f64, f64)> = (0..1000).map(|_| (g.random::<f64>(), g.random::<f64>())).collect();
        let (x, y) = (dirs[i % 2], dirs[(i / 2) % 2]);
        let brute: Vec<bool> = pts.iter().map(|p| !pts.iter().any(|q| dominates(*q, *p, x, y))).collect();
        ensure(pareto_front(&pts, x, y) == brute, || format!("instance {i} differs"))?;
    }
    Ok("100 instances of 1000 points match brute force".into())
}

fn fingerprint(store: &Store, pid: &str) -> Result<Vec<String>, String> {
    let state = store.load_state(pid).map_err(|e| e.to_string())?;
    Ok(state
        .trials
        .values()
        .map(|t| format!("{} {} {:?} {:?}", t.trial_id, serde_json::to_string(&t.assignment).unwrap_or_default(), t.status, t.objective))
        .collect())
}

fn crash_resume() -> Outcome {
    let (_d, store) = temp_store();
    let pbt = OptimizerConfig::Pbt(PbtConfig::new(6, 2, 0.5, 5));
    let mut cfg = config("quad_bowl", Direction::Minimize, unit_space(&["x1", "x2", "x3"]), pbt, 60, 11);
    cfg.parallelism = 3;
    let reference = run_process(&store, &cfg)?;
    let records = store.read_log(&reference).map_err(|e| e.to_string())?.len() as u64;
    let expected = fingerprint(&store, &reference)?;

    let mut g = rng::seeded(99);
    let mut points = Vec::new();
    for _ in 0..10 {
        let crash_at = g.random_range(1..records - 1);
        points.push(crash_at);
        let study = store.create_study("crash").map_err(|e| e.to_string())?;
        let pid = store.create_process(&study.id, &cfg).map_err(|e| e.to_string())?;
        let opts = DriveOptions { crash_after_records: Some(crash_at), ..Default::default() };
        match drive(&store, &pid, opts) {
            Err(RunnerError::InjectedCrash(_)) => {}
            other => return Err(format!("crash at {crash_at}: {other:?}")),
        }
        let status = drive(&store, &pid, DriveOptions::default()).map_err(|e| format!("resume after {crash_at}: {e}"))?;
        ensure(status == ProcessStatus::Finished, || format!("resume after {crash_at}: {status:?}"))?;
        check_process(&store, &pid).map_err(|e| format!("crash at {crash_at}: {e}"))?;
        ensure(fingerprint(&store, &pid)? == expected, || format!("crash at {crash_at}: trials differ from uninterrupted run"))?;
    }

    // One process killed at all ten points in turn.
    let study = store.create_study("crash-chain").map_err(|e| e.to_string())?;
    let pid = store.create_process(&study.id, &cfg).map_err(|e| e.to_string())?;
    for _ in 0..10 {
        let opts = DriveOptions { crash_after_records: Some(g.random_range(1..records / 10)), ..Default::default() };
        match drive(&store, &pid, opts) {
            Err(RunnerError::InjectedCrash(_)) | Ok(ProcessStatus::Finished) => {}
            other => return Err(format!("chained crash: {other:?}")),
        }
    }
    if store.status(&pid).map_err(|e| e.to_string())? != ProcessStatus::Finished {
        drive(&store, &pid, DriveOptions::default()).map_err(|e| e.to_string())?;
    }
    check_process(&store, &pid)?;
    ensure(fingerprint(&store, &pid)? == expected, || "chained crashes changed the trials".into())?;
    points.sort_unstable();
    Ok(format!("crash points {points:?} of {records} records; invariants hold, replay equals snapshot"))
}

struct Http {
    app: Router,
    svc: Arc<Service>,
    rt: tokio::runtime::Runtime,
}

impl Http {
    fn call(&self, method: &str, uri: &str, body: Option<Value>) -> Result<Value, String> {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
            .map_err(|e| e.to_string())?;
        let app = self.app.clone();
        self.rt.block_on(async move {
            let resp = app.oneshot(req).await.map_err(|e| e.to_string())?;
            let status = resp.status();
            let bytes = resp.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes();
            let v: Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
            if status.is_success() { Ok(v) } else { Err(format!("{method} {uri}: {status} {v}")) }
        })
    }

    fn run(&self, pid: &str) -> Result<f64, String> {
        self.call("POST", &format!("/api/v1/processes/{pid}/start"), None)?;
        let t0 = Instant::now();
        while self.svc.is_running(pid) {
            ensure(t0.elapsed() < Duration::from_secs(60), || format!("{pid} did not finish"))?;
            std::thread::sleep(Duration::from_millis(5));
        }
        let v = self.call("GET", &format!("/api/v1/processes/{pid}"), None)?;
        ensure(v["summary"]["status"] == "finished", || format!("{pid}: {}", v["summary"]["status"]))?;
        v["summary"]["mean"].as_f64().ok_or_else(|| format!("{pid}: no mean"))
    }
}

fn steering_loop() -> Outcome {
    let (_d, store) = temp_store();
    let svc = Arc::new(Service::new(store));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
    let http = Http { app: router(Arc::clone(&svc)), svc, rt };
    let (mut before, mut after) = (Vec::new(), Vec::new());
    let mut narrowed = BTreeMap::<String, usize>::new();
    for seed in 0..20 {
        let study = http.call("POST", "/api/v1/studies", Some(json!({ "name": format!("steer-{seed}") })))?;
        let sid = study["id"].as_str().ok_or("no study id")?.to_string();
        let algo = OptimizerConfig::Random(RandomConfig::default());
        let cfg = config("product_surface", Direction::Maximize, unit_space(&["x1", "x2"]), algo, 40, seed);
        let created = http.call("POST", &format!("/api/v1/studies/{sid}/processes"), Some(serde_json::to_value(&cfg).map_err(|e| e.to_string())?))?;
        let p1 = created["process_id"].as_str().ok_or("no process id")?.to_string();
        before.push(http.run(&p1)?);

        let imp = http.call("GET", &format!("/api/v1/processes/{p1}/importance"), None)?;
        let top = imp["entries"]
            .as_array()
            .ok_or("no entries")?
            .iter()
            .filter(|e| e["params"].as_array().is_some_and(|p| p.len() == 1))
            .max_by(|a, b| a["fraction"].as_f64().partial_cmp(&b["fraction"].as_f64()).unwrap_or(std::cmp::Ordering::Equal))
            .and_then(|e| e["params"][0].as_str())
            .ok_or("no single-parameter entry")?
            .to_string();
        *narrowed.entry(top.clone()).or_default() += 1;
        let curve = http.call("GET", &format!("/api/v1/processes/{p1}/marginal?params={top}&resolution=40"), None)?;
        let mean: Vec<f64> = curve["mean"].as_array().ok_or("no mean")?.iter().filter_map(Value::as_f64).collect();
        let quartile = (0..4)
            .max_by(|&a, &b| {
                let avg = |q: usize| mean[q * 10..(q + 1) * 10].iter().sum::<f64>();
                avg(a).partial_cmp(&avg(b)).unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(3);
        let (low, high) = (quartile as f64 / 4.0, (quartile + 1) as f64 / 4.0);
        let draft = json!({
            "source_processes": [p1],
            "edits": [{ "op": "narrow", "name": top, "low": low, "high": high }],
            "seed": seed + 1000,
        });
        let refined = http.call("POST", &format!("/api/v1/studies/{sid}/refine"), Some(draft))?;
        let p2 = refined["process_id"].as_str().ok_or("no refined process")?.to_string();
        after.push(http.run(&p2)?);
    }
    let (mb, ma) = (median(before), median(after));
    ensure(ma > mb, || format!("median mean objective {mb:.4} -> {ma:.4}"))?;
    Ok(format!("median mean objective {mb:.4} -> {ma:.4} over 20 seeds; narrowed {narrowed:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 hyperband schedule", hyperband_table),
        ("2 fanova analytic oracle", fanova_oracle),
        ("3 marginal exactness", marginal_exactness),
        ("4 pbt correctness", pbt_correctness),
        ("5 tpe vs random", tpe_vs_random),
        ("6 bohb gating", bohb_gating),
        ("7 reservoir uniformity", reservoir_uniformity),
        ("8 pareto oracle", pareto_oracle),
        ("9 crash resume", crash_resume),
        ("10 steering loop", steering_loop),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{:.2?}]", t0.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why} [{:.2?}]", t0.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
