mod args;
mod commands;
mod config;
mod error;
mod model_file;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn run() -> Result<(), CliError> {
    let argv = config::expand(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let jobs = cli.command.common().jobs;
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    eprintln!("config: {}", serde_json::to_string(&cli.command).unwrap_or_default());
    match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Select(a) => commands::select(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Gof(a) => commands::gof(a),
        Command::Interpret(a) => commands::interpret(a),
        Command::Eval(a) => commands::eval(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
