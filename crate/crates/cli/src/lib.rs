//! The `emwave` command line: every subcommand maps onto one library
//! operation and leaves a run manifest with SHA-256 digests of its inputs
//! and outputs.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;

use clap::error::ErrorKind;
use clap::Parser;
use emwave_core::exec::test_mode;
use emwave_core::Execution;

pub use args::{Cli, Command};
pub use error::{CliError, Result};
pub use manifest::{Artifact, RunManifest};

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Generate(_) => "generate",
        Command::Solve(_) => "solve",
        Command::Train(_) => "train",
        Command::GridSearch(_) => "grid-search",
        Command::Rollout(_) => "rollout",
        Command::Eval(_) => "eval",
        Command::Ablate(_) => "ablate",
        Command::ExportPlots(_) => "export-plots",
    }
}

fn dispatch(cmd: &Command, exec: Execution) -> Result<manifest::RunRecord> {
    match cmd {
        Command::Generate(a) => commands::run_generate(a, exec),
        Command::Solve(a) => commands::run_solve(a),
        Command::Train(a) => commands::run_train(a, exec),
        Command::GridSearch(a) => commands::run_grid_search(a, exec),
        Command::Rollout(a) => commands::run_rollout(a),
        Command::Eval(a) => commands::run_eval(a, exec),
        Command::Ablate(a) => commands::run_ablate(a, exec),
        Command::ExportPlots(a) => commands::run_export(a),
    }
}

#[cfg(feature = "parallel")]
fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) if n > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_jobs<T: Send>(_jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(f())
}

/// Runs a parsed command line and writes its manifest.
pub fn execute(cli: &Cli, argv: &[String]) -> Result<RunManifest> {
    if cli.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let test = test_mode();
    let exec = if test || cli.jobs == Some(1) {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let clock = manifest::Clock::start();
    let record = with_jobs(cli.jobs, || dispatch(&cli.command, exec))??;
    let m = clock.finish(name(&cli.command), argv.to_vec(), cli.jobs, test, &record)?;
    if let Some(path) = cli.manifest.as_ref().or(record.manifest.as_ref()) {
        manifest::write(&m, path)?;
    }
    Ok(m)
}

/// Entry point of the binary; returns the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.line());
            return err.code();
        }
    };
    match execute(&cli, &argv[1.min(argv.len())..]) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.code()
        }
    }
}
