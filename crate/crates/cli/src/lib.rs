//! Command-line front end for the `condreg` library.
//!
//! Every command is a pure function of its input files, flags and seed, so
//! reruns are byte-identical and the worker count never changes the output.
//! Single results are written as JSON and sweeps as CSV.

mod args;
mod commands;
mod error;
mod io;

pub use args::{Cli, Command};
pub use error::{exit_code, CliError};

use std::ffi::OsString;

use clap::Parser;

/// Environment variable read for the default worker count.
pub const WORKERS_ENV: &str = "CONDREG_WORKERS";

/// Parses `args` (including the program name) and runs the command.
///
/// Returns the report text. When `--out` is given the report is also
/// written to that file.
pub fn run_args<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::from_clap(&e))?;
    run(&cli)
}

/// Runs a parsed command inside a dedicated thread pool.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::invalid(format!("cannot start {workers} workers: {e}")))?;
    let text = pool.install(|| commands::dispatch(&cli.command))?;
    if let Some(path) = &cli.out {
        std::fs::write(path, &text).map_err(|e| CliError::io(path, e))?;
    }
    Ok(text)
}

/// Entry point used by the binary: prints the report or the diagnostic and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = CliError::from_clap(&e).code;
            // help and version go to stdout with code 0
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(text) => {
            if cli.out.is_none() {
                print!("{text}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
