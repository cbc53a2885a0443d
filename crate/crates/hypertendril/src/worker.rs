// SPDX-License-Identifier: Apache-2.0

//! Built-in synthetic objective workers. Each speaks the wire protocol, so
//! the engine treats them exactly like external programs. They run either
//! in-process or as `hypertendril worker <name>`.
//!
//! Numeric parameters are read in name order, except `seed` and `noise`,
//! which parameterize `noisy_additive`. The checkpoint holds the number of
//! steps trained so far; continuations report steps after that offset.

use std::io::{BufRead, Write};
use std::path::Path;

use hypertendril_core::objectives;
use serde::{Deserialize, Serialize};

use crate::protocol::{StartRecord, WorkerRecord};

pub const BUILTINS: &[&str] = &[
    "branin",
    "hartmann3",
    "quad_bowl",
    "quadratic",
    "product_surface",
    "noisy_additive",
];

pub fn is_builtin(name: &str) -> bool {
    BUILTINS.contains(&name)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SyntheticCheckpoint {
    pub accumulated_steps: u64,
}

/// Evaluates a builtin on numeric inputs.
pub fn evaluate(name: &str, x: &[f64], seed: u64, noise: f64) -> Result<f64, String> {
    let need = |n: usize| {
        if x.len() < n {
            Err(format!("`{name}` needs {n} numeric parameters, got {}", x.len()))
        } else {
            Ok(())
        }
    };
    match name {
        "branin" => need(2).map(|_| objectives::branin(x[0], x[1])),
        "hartmann3" => need(3).map(|_| objectives::hartmann3([x[0], x[1], x[2]])),
        "quad_bowl" => need(1).map(|_| objectives::quad_bowl(x)),
        "quadratic" => need(1).map(|_| objectives::quadratic(x)),
        "product_surface" => need(2).map(|_| objectives::product_surface(x[0], x[1])),
        "noisy_additive" => need(1).map(|_| objectives::noisy_additive(x, noise, seed)),
        other => Err(format!("unknown builtin `{other}`")),
    }
}

/// Runs one trial of builtin `name`, writing protocol lines to `out`.
/// Returns the process exit code.
pub fn run_builtin(name: &str, start: &StartRecord, out: &mut dyn Write) -> i32 {
    match run_inner(name, start, out) {
        Ok(()) => 0,
        Err(reason) => {
            let _ = writeln!(out, "{}", WorkerRecord::Fail { reason }.to_line());
            0
        }
    }
}

fn run_inner(name: &str, start: &StartRecord, out: &mut dyn Write) -> Result<(), String> {
    let mut inputs = Vec::new();
    let mut seed = 0u64;
    let mut noise = 0.1;
    for (k, v) in &start.params {
        let Some(num) = v.as_f64() else { continue };
        match k.as_str() {
            "seed" => seed = num as u64,
            "noise" => noise = num,
            _ => inputs.push(num),
        }
    }
    let objective = evaluate(name, &inputs, seed, noise)?;

    let offset = match &start.checkpoint_in {
        None => 0,
        Some(path) => read_checkpoint(path)?.accumulated_steps,
    };
    let io = |e: std::io::Error| e.to_string();
    for s in 1..=start.budget {
        let step = offset + s;
        let progress = 1.0 - 0.5f64.powi(step.min(64) as i32);
        let values = [
            ("objective".to_string(), objective * progress),
            ("loss".to_string(), 1.0 / step as f64),
        ]
        .into_iter()
        .collect();
        writeln!(out, "{}", WorkerRecord::Metric { step, values }.to_line()).map_err(io)?;
    }
    let ck = SyntheticCheckpoint {
        accumulated_steps: offset + start.budget,
    };
    if let Some(dir) = start.checkpoint_out.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(&start.checkpoint_out, serde_json::to_vec(&ck).map_err(|e| e.to_string())?)
        .map_err(io)?;
    let aux = [
        ("steps".to_string(), ck.accumulated_steps as f64),
        ("model_size".to_string(), 1.0 + inputs.iter().map(|v| v.abs()).sum::<f64>()),
    ]
    .into_iter()
    .collect();
    writeln!(out, "{}", WorkerRecord::Done { objective, aux }.to_line()).map_err(io)?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<SyntheticCheckpoint, String> {
    let bytes = std::fs::read(path)
        .map_err(|e| format!("cannot read checkpoint {}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("corrupt checkpoint {}: {e}", path.display()))
}

/// Entry point for `hypertendril worker <name>`: reads one start line from
/// `input` and streams records to `out`.
pub fn serve_stdio(name: &str, input: &mut dyn BufRead, out: &mut dyn Write) -> i32 {
    let mut line = String::new();
    if input.read_line(&mut line).is_err() {
        return 1;
    }
    match serde_json::from_str::<StartRecord>(&line) {
        Ok(start) => run_builtin(name, &start, out),
        Err(e) => {
            let reason = format!("bad start record: {e}");
            let _ = writeln!(out, "{}", WorkerRecord::Fail { reason }.to_line());
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::parse_worker_line;
    use hypertendril_core::ParamValue;

    fn start(params: &[(&str, f64)], budget: u64, ck_in: Option<&Path>, ck_out: &Path) -> StartRecord {
        StartRecord {
            trial_id: "t".into(),
            params: params.iter().map(|(k, v)| (k.to_string(), ParamValue::Num(*v))).collect(),
            budget,
            checkpoint_in: ck_in.map(Path::to_path_buf),
            checkpoint_out: ck_out.to_path_buf(),
        }
    }

    fn records(buf: &[u8]) -> Vec<WorkerRecord> {
        std::str::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| parse_worker_line(l).unwrap())
            .collect()
    }

    #[test]
    fn quadratic_closed_form() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Vec::new();
        let code = run_builtin("quadratic", &start(&[("x", 0.3)], 1, None, &dir.path().join("c")), &mut out);
        assert_eq!(code, 0);
        match records(&out).last().unwrap() {
            WorkerRecord::Done { objective, .. } => assert!((objective - 0.96).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn continuation_offsets_steps() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        run_builtin("quad_bowl", &start(&[("x1", 0.2)], 3, None, &a), &mut Vec::new());
        let mut out = Vec::new();
        run_builtin("quad_bowl", &start(&[("x1", 0.2)], 2, Some(&a), &b), &mut out);
        let steps: Vec<u64> = records(&out)
            .iter()
            .filter_map(|r| match r {
                WorkerRecord::Metric { step, .. } => Some(*step),
                _ => None,
            })
            .collect();
        assert_eq!(steps, vec![4, 5]);
        let ck: SyntheticCheckpoint = serde_json::from_slice(&std::fs::read(&b).unwrap()).unwrap();
        assert_eq!(ck.accumulated_steps, 5);
    }

    #[test]
    fn missing_checkpoint_fails() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Vec::new();
        let missing = dir.path().join("nope");
        run_builtin("quad_bowl", &start(&[("x1", 0.2)], 1, Some(&missing), &dir.path().join("o")), &mut out);
        assert!(matches!(records(&out).last().unwrap(), WorkerRecord::Fail { .. }));
    }

    #[test]
    fn builtin_values() {
        assert!((evaluate("branin", &[std::f64::consts::PI, 2.275], 0, 0.0).unwrap() - 0.397887).abs() < 1e-4);
        assert_eq!(evaluate("quad_bowl", &[0.5, 0.5, 0.5], 0, 0.0).unwrap(), 0.0);
        let a = evaluate("noisy_additive", &[0.1, 0.7], 42, 0.1).unwrap();
        let b = evaluate("noisy_additive", &[0.1, 0.7], 42, 0.1).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(evaluate("branin", &[1.0], 0, 0.0).is_err());
    }
}
