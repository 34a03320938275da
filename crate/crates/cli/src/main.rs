#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use commands::Outcome;
use config::RunConfig;

const THREADS_VAR: &str = "PARABOLIC_NONLOCAL_THREADS";

/// Runs audits, propagations, nonlocal solves and convergence studies from a
/// JSON config and writes report.json plus CSV artifacts.
#[derive(Parser, Debug)]
#[command(name = "parabolic-nonlocal", version)]
struct Cli {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `problem.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

fn load(path: &Path) -> Result<RunConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
}

fn write_report(dir: &Path, report: &serde_json::Value) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let text = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    fs::write(dir.join("report.json"), text + "\n").map_err(|e| format!("cannot write report: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var(THREADS_VAR) {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("ignoring {THREADS_VAR}={n}: expected a positive integer"),
        }
    }

    let loaded = load(&cli.config);
    let out_dir = cli
        .output
        .clone()
        .or_else(|| loaded.as_ref().ok().and_then(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));

    let (config, outcome) = match loaded {
        Ok(mut cfg) => {
            if let Some(seed) = cli.seed {
                cfg.problem.seed = seed;
            }
            cfg.output = Some(out_dir.clone());
            let outcome = match cfg.validate() {
                Err(e) => Outcome::ConfigError(e),
                Ok(()) => match fs::create_dir_all(&out_dir) {
                    Err(e) => Outcome::ConfigError(format!("cannot create {}: {e}", out_dir.display())),
                    Ok(()) => commands::run(&cfg, &out_dir),
                },
            };
            (Some(cfg), outcome)
        }
        Err(e) => (None, Outcome::ConfigError(e)),
    };

    let (results, error) = match &outcome {
        Outcome::Ok(body) => (body.clone(), None),
        Outcome::AuditFailed(body, msg) | Outcome::NotConverged(body, msg) => (body.clone(), Some(msg.clone())),
        Outcome::ConfigError(msg) => (serde_json::Value::Null, Some(msg.clone())),
    };
    let report = json!({
        "tool": "parabolic-nonlocal",
        "version": env!("CARGO_PKG_VERSION"),
        "status": outcome.status(),
        "exit_code": outcome.exit_code(),
        "seed": config.as_ref().map(|c| c.problem.seed),
        "config": config,
        "results": results,
        "error": error,
    });
    if let Err(e) = write_report(&out_dir, &report) {
        eprintln!("{e}");
    }
    if !cli.quiet {
        match &error {
            None => println!("{}: ok ({})", outcome.status(), out_dir.join("report.json").display()),
            Some(msg) => eprintln!("{}: {msg}", outcome.status()),
        }
    }
    ExitCode::from(outcome.exit_code())
}
