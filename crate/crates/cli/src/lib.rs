//! Library side of the `fsdiff` binary: argument resolution and the four subcommands.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or format error, 4 pipeline error.

use std::ffi::OsString;

use clap::Parser;

pub mod args;
mod commands;
pub mod config;

pub use commands::*;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] fsdiff_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_data_error() => 3,
            CliError::Core(_) => 4,
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: args::Command) -> Result<(), CliError> {
    use args::Command;
    match cmd {
        Command::Gen(a) => {
            let (cfg, out) = resolve_gen(&a)?;
            let summary = cmd_gen(&cfg, &out)?;
            println!("{}", summary.manifest.display());
        }
        Command::Run(a) => {
            let (cfg, out) = resolve_run(&a)?;
            let run = cmd_run(&a.manifest, &cfg, &out)?;
            print!("{}", run.report.to_text());
        }
        Command::Sweep(a) => {
            let (grid, cfg, out) = resolve_sweep(&a)?;
            let rows = cmd_sweep(&a.manifest, &grid, &cfg, &out, !a.no_timing)?;
            print!("{}", sweep_table(&rows, !a.no_timing));
        }
        Command::Compare(a) => {
            let (cfg, out) = resolve_compare(&a)?;
            let rows = cmd_compare(&a.manifest, &cfg, &out)?;
            print!("{}", compare_table(&rows));
        }
    }
    Ok(())
}
