//! `stochwave`: runs one command of the laboratory from a TOML config and
//! writes its artifacts with a manifest.

// `!(x > 0.0)` style tests reject NaN; indexed loops mirror the formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::json;
use sha2::{Digest, Sha256};
use stochwave_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("invariant checks failed: {0}")]
    Invariant(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 validation, 2 solver, 3 blow-up, 4 uninformative design.
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Invariant(_) => 2,
            CliError::Core(e) => match e {
                Error::Grid(_) | Error::Parameter(_) | Error::Model(_) | Error::Format(_) | Error::Io(_) => 1,
                Error::Blowup { .. } => 3,
                Error::Design(_) | Error::TooFewSamples { .. } => 4,
                _ => 2,
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "stochwave", version, about = "Stochastic travelling-wave laboratory")]
struct Args {
    /// TOML run configuration; omitted sections take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of: wave, spectrum, simulate, exit-sweep, phase-sweep,
    /// torus-sweep, forward-check, validate.
    #[arg(long)]
    command: String,
    /// Output directory (overrides output.directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for trajectory ensembles.
    #[arg(long, env = "STOCHWAVE_WORKERS")]
    workers: Option<usize>,
    /// Overrides master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the keys that took default values.
    #[arg(long)]
    show_defaults: bool,
}

fn execute(args: &Args) -> Result<(), CliError> {
    let parsed = match &args.config {
        Some(p) => config::parse_file(p)?,
        None => config::parse_str("")?,
    };
    let mut cfg = parsed.config;
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if args.show_defaults {
        for (k, v) in &parsed.defaulted {
            eprintln!("default {k} = {v}");
        }
    } else {
        eprintln!("{} fields defaulted (--show-defaults lists them)", parsed.defaulted.len());
    }
    if !commands::COMMANDS.contains(&args.command.as_str()) {
        return Err(CliError::Validation(vec![format!(
            "unknown command '{}' (known: {})",
            args.command,
            commands::COMMANDS.join(", ")
        )]));
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    std::fs::create_dir_all(&out)?;
    let canonical = cfg.canonical();
    std::fs::write(out.join("config.toml"), &canonical)?;
    let workers = args.workers.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Validation(vec![format!("--workers: {e}")]))?;
    let started = Instant::now();
    let result = pool.install(|| commands::run(&args.command, &cfg, &out));
    let wall = started.elapsed().as_secs_f64();
    let (status, summary) = match &result {
        Ok(v) => ("ok".to_string(), v.clone()),
        Err(e) => (format!("error (exit {}): {e}", e.code()), serde_json::Value::Null),
    };
    let manifest = json!({
        "command": args.command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": format!("{:x}", Sha256::digest(canonical.as_bytes())),
        "master_seed": cfg.master_seed,
        "workers": pool.current_num_threads(),
        "wall_time_s": wall,
        "status": status,
    });
    commands::write_json(&out, "manifest.json", &manifest)?;
    if result.is_ok() {
        commands::write_json(&out, "summary.json", &summary)?;
    }
    result.map(|_| ())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stochwave: {e}");
            ExitCode::from(e.code())
        }
    }
}
