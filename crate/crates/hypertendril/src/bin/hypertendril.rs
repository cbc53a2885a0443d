// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use hypertendril::config::{load_config_text, ConfigError, EXAMPLE_CONFIG};
use hypertendril::query::{versioned, QueryError, Service};
use hypertendril::runner::{self, DriveOptions, RunnerError};
use hypertendril::store::{Store, StoreError, STORE_ENV};
use hypertendril::{api, plot, worker};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "hypertendril", version, about = "Steerable hyperparameter optimization")]
struct Cli {
    /// Store root directory.
    #[arg(long, global = true, env = STORE_ENV, default_value = "hypertendril-store")]
    store: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an annotated example config.
    Init {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Create (or resume) a process from a config and drive it to completion.
    Run {
        config: Option<PathBuf>,
        /// Add the process to this study instead of creating a new one.
        #[arg(long)]
        study: Option<String>,
        /// Resume an existing process.
        #[arg(long)]
        resume: Option<String>,
    },
    /// Summary of a study.
    Status {
        study: String,
        #[arg(long)]
        json: bool,
    },
    /// Best finished trials of a study or process.
    Top {
        scope: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// fANOVA importance report for a process.
    Importance {
        process: String,
        #[arg(long)]
        pairs: bool,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Export every trial of a study.
    Export {
        study: String,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a static SVG plot.
    Plot {
        process: String,
        /// peak, exploration, or marginal:NAME
        #[arg(long)]
        view: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Run a built-in synthetic worker over stdin/stdout.
    #[command(hide = true)]
    Worker { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

enum Failure {
    Validation(String),
    Corruption(String),
    Other(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Config(c) => Failure::Validation(c.to_string()),
            e if e.is_corruption() => Failure::Corruption(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

impl From<QueryError> for Failure {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::Store(s) => s.into(),
            QueryError::Invalid { .. } => Failure::Validation(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

impl From<RunnerError> for Failure {
    fn from(e: RunnerError) -> Self {
        match e {
            RunnerError::Store(s) => s.into(),
            e @ RunnerError::Diverged { .. } => Failure::Corruption(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(&versioned(v)).expect("output serializes"));
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Worker { name } = &cli.command {
        let stdin = std::io::stdin();
        let code = worker::serve_stdio(name, &mut stdin.lock(), &mut std::io::stdout().lock());
        return ExitCode::from(code as u8);
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Corruption(m)) => {
            eprintln!("store corruption: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn stop_on_ctrl_c() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = Arc::clone(&flag);
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build();
        if let Ok(rt) = rt {
            if rt.block_on(tokio::signal::ctrl_c()).is_ok() {
                eprintln!("stop requested; waiting for running trials");
                f.store(true, Ordering::SeqCst);
            }
        }
    });
    flag
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if let Command::Init { out, force } = &cli.command {
        return match out {
            None => {
                print!("{EXAMPLE_CONFIG}");
                Ok(())
            }
            Some(p) if p.exists() && !force => Err(Failure::Other(format!("{} exists (use --force)", p.display()))),
            Some(p) => Ok(std::fs::write(p, EXAMPLE_CONFIG)?),
        };
    }
    let store = Store::open(&cli.store)?;
    let svc = Arc::new(Service::new(store.clone()));
    match cli.command {
        Command::Init { .. } | Command::Worker { .. } => unreachable!("handled above"),
        Command::Run { config, study, resume } => {
            let pid = match (resume, config) {
                (Some(pid), _) => pid,
                (None, None) => return Err(Failure::Validation("a config file or --resume is required".into())),
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path)?;
                    let cfg = load_config_text(&text).map_err(|e| {
                        Failure::Validation(format!("{}: {e}", path.display()))
                    })?;
                    let study = match study {
                        Some(s) => s,
                        None => {
                            let name = path.file_stem().map_or("study".into(), |s| s.to_string_lossy().into_owned());
                            svc.create_study(&name)?.id
                        }
                    };
                    svc.create_process(&study, &cfg)?
                }
            };
            eprintln!("driving {pid}");
            let opts = DriveOptions {
                stop: stop_on_ctrl_c(),
                ..DriveOptions::default()
            };
            let status = runner::drive(&store, &pid, opts)?;
            let summary = svc.process(&pid)?;
            println!(
                "{pid}: {} ({} trials, best {})",
                serde_json::to_value(status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                summary.total,
                fmt_opt(summary.best.map(|b| b.objective))
            );
            Ok(())
        }
        Command::Status { study, json } => {
            let s = svc.summary(&study)?;
            if json {
                print_json(&s);
                return Ok(());
            }
            println!("study {} ({}): {} trials, best {}", s.study.id, s.study.name, s.total, fmt_opt(s.best.as_ref().map(|b| b.objective)));
            for p in &s.processes {
                let counts: Vec<String> = p.counts.iter().filter(|(_, n)| **n > 0).map(|(k, n)| format!("{k}={n}")).collect();
                println!(
                    "  {:<10} {:<9} {:<9} best {:>12}  mean {:>12}  std {:>12}  [{}]",
                    p.process_id,
                    serde_json::to_value(p.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                    p.algorithm,
                    fmt_opt(p.best.as_ref().map(|b| b.objective)),
                    fmt_opt(p.mean),
                    fmt_opt(p.std),
                    counts.join(" ")
                );
            }
            Ok(())
        }
        Command::Top { scope, k, metric, json } => {
            let rows = svc.top_k(&scope, k, metric.as_deref(), None)?;
            if json {
                print_json(&serde_json::json!({ "trials": rows }));
                return Ok(());
            }
            for r in rows {
                let params: Vec<String> = r.assignment.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("{:>3}  {:<16} {:>14.6}  {}", r.rank, r.trial, r.value, params.join(" "));
            }
            Ok(())
        }
        Command::Importance { process, pairs, top, json } => {
            let report = svc.importance(&process, pairs, top)?;
            if json {
                print_json(report.as_ref());
                return Ok(());
            }
            if report.unreliable_for_pbt {
                println!("warning: population-based processes evaluate several hyperparameter sets per model; importance is unreliable");
            }
            if report.zero_variance {
                println!("warning: the surrogate has zero variance; all fractions are 0");
            }
            for e in &report.entries {
                println!("{:<32} {:>8.4} ± {:.4}", e.params.join(" x "), e.fraction, e.std);
            }
            for d in &report.diagnostics {
                println!("diagnostic: {d}");
            }
            Ok(())
        }
        Command::Export { study, format, out } => {
            let text = export(&svc, &study, format)?;
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Plot { process, view, out } => {
            let svg = match view.as_str() {
                "peak" => plot::peak_svg(&svc.peak(&process)?),
                "exploration" => {
                    let higher = svc.process_config(&process)?.objective.direction
                        == hypertendril_core::pareto::Direction::Maximize;
                    plot::exploration_svg(&svc.exploration(&process)?, higher)
                }
                v => match v.strip_prefix("marginal:") {
                    Some(names) => {
                        let names: Vec<&str> = names.split(',').collect();
                        plot::marginal_svg(&svc.marginal(&process, &names, None)?)
                    }
                    None => return Err(Failure::Validation(format!("unknown view `{v}`"))),
                },
            };
            std::fs::write(&out, svg)?;
            Ok(())
        }
        Command::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(api::serve(svc, &addr))?;
            Ok(())
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn export(svc: &Service, study: &str, format: Format) -> Result<String, Failure> {
    let ids = svc.store().study(study)?.process_ids;
    let mut trials = Vec::new();
    for pid in &ids {
        trials.extend(svc.trials(pid, None, None)?);
    }
    let mut out = String::new();
    match format {
        Format::Jsonl => {
            for t in &trials {
                out.push_str(&serde_json::to_string(t).expect("trial serializes"));
                out.push('\n');
            }
        }
        Format::Csv => {
            let params: BTreeSet<String> = trials.iter().flat_map(|t| t.assignment.keys().cloned()).collect();
            let aux: BTreeSet<String> = trials.iter().flat_map(|t| t.aux.keys().cloned()).collect();
            let mut header = vec!["trial".to_string(), "process".into(), "status".into(), "objective".into(), "budget_consumed".into()];
            header.extend(params.iter().cloned());
            header.extend(aux.iter().cloned());
            out.push_str(&header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(","));
            out.push('\n');
            for t in &trials {
                let mut row = vec![
                    t.key.clone(),
                    t.process_id.clone(),
                    t.status.as_str().to_string(),
                    t.objective.map(|v| v.to_string()).unwrap_or_default(),
                    t.budget_consumed.to_string(),
                ];
                row.extend(params.iter().map(|p| t.assignment.get(p).map(|v| v.to_string()).unwrap_or_default()));
                row.extend(aux.iter().map(|a| t.aux.get(a).map(|v| v.to_string()).unwrap_or_default()));
                out.push_str(&row.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
                out.push('\n');
            }
        }
    }
    Ok(out)
}
