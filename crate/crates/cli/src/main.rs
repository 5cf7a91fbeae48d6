// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

//! `openqoc <command> <config.json> [--out DIR]`
//!
//! Exit codes: 0 success, 2 config error, 3 numerical failure,
//! 4 cap refusal. `OPENQOC_THREADS` sets the worker thread count.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use crate::commands::Run;
use crate::config::{Command, RunConfig};
use crate::error::Failure;
use crate::output::{sha256_hex, Manifest, OutDir};

#[derive(Parser)]
#[command(name = "openqoc", version, about = "Adjoint optimal control for Lindblad systems")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Run configuration (JSON).
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

const THREADS_VAR: &str = "OPENQOC_THREADS";

fn init_threads() -> Result<usize, Failure> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(rayon::current_num_threads());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("{THREADS_VAR} must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(format!("{THREADS_VAR}: {e}")))?;
    Ok(n)
}

fn load(cli: &Cli) -> Result<(RunConfig, Vec<u8>, PathBuf), Failure> {
    let bytes = std::fs::read(&cli.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", cli.config.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Failure::Config(format!("config: {e}")))?;
    let mut cfg = RunConfig::from_json(text)?;
    let base = cli.config.parent().map(PathBuf::from).unwrap_or_default();
    cfg.validate(cli.command, &base)?;
    let out = match (&cli.out, &cfg.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) if o.is_relative() => base.join(o),
        (None, Some(o)) => o.clone(),
        (None, None) => PathBuf::from("out"),
    };
    Ok((cfg, bytes, out))
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let start = Instant::now();
    let threads = init_threads()?;
    let (cfg, bytes, out) = load(cli)?;
    let mut run = Run { cfg, out: OutDir::create(out)?, peak_live_matrices: 0 };
    let result = match cli.command {
        Command::Simulate => commands::simulate(&mut run),
        Command::GradCheck => commands::grad_check(&mut run),
        Command::OptimizeReadout | Command::OptimizeReset => commands::optimize(&mut run, cli.command),
        Command::CalibrateReset => commands::calibrate_reset(&mut run),
        Command::Validate => commands::validate(&mut run),
    };
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(f) => f.to_string(),
    };
    let manifest = Manifest {
        command: serde_json::to_value(cli.command).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
        config_path: cli.config.display().to_string(),
        config_sha256: sha256_hex(&bytes),
        openqoc_version: env!("CARGO_PKG_VERSION").to_string(),
        openqoc_core_version: openqoc_core::VERSION.to_string(),
        rng_seed: run.cfg.rng_seed,
        threads,
        runtime_s: start.elapsed().as_secs_f64(),
        peak_live_matrices: run.peak_live_matrices,
        status,
        outputs: std::mem::take(&mut run.out.written),
    };
    run.out.write_json("manifest.json", &manifest)?;
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("openqoc: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
