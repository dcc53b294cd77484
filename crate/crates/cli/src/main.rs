//! `transport-meta`: transported ATE and causal mean ratio estimation on CSV
//! data, and the simulation grids.
//!
//! Exit codes: 0 success, 2 bad input (data, spec or flags), 3 numeric
//! failure. Diagnostics go to stderr; stdout carries only the summary.

mod commands;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    let cli = commands::Cli::parse();
    match commands::run(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
